#include <doctest.h>

#include <cmath>
#include <set>

#include "pavenet/synthgen.hpp"
#include "pavenet/training.hpp"

using namespace pavenet;

namespace {

TrainDataset tiny_dataset(int writers, int per_session, uint64_t seed) {
    SynthConfig cfg;
    cfg.num_writers = writers;
    cfg.per_session_count = per_session;
    cfg.seed = seed;
    GeneratedDataset ds = generate_dataset(cfg);
    std::vector<FeatureSequence> features;
    for (auto& [path, trace] : ds.traces) features.push_back(preprocess_trace(trace));
    return TrainDataset::from_features(std::move(features));
}

PavenetConfig tiny_model_config(int num_writers) {
    PavenetConfig cfg;
    cfg.channels = 8;
    cfg.dpm_n = 4;
    cfg.embed_dim = 4;
    cfg.pool_heads = 2;
    cfg.head_hidden = 8;
    cfg.num_writers = num_writers;
    return cfg;
}

FeatureSequence ramp_sequence(int L) {
    FeatureSequence fs;
    fs.length = L;
    fs.data.resize(static_cast<size_t>(12) * L);
    for (int c = 0; c < 12; ++c)
        for (int t = 0; t < L; ++t) fs.at(c, t) = c + t * 0.01;
    return fs;
}

Tensor embedding_from(const std::vector<double>& v) {
    return Tensor::from({static_cast<int>(v.size())}, std::vector<double>(v));
}

// loss oracles: straight loops over raw arrays, no tensor machinery
double dist_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s + 1e-12);
}

double dot_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct OracleGroups {
    std::map<int, std::vector<int>> positives, negatives;
};

OracleGroups group_oracle(const Batch& batch) {
    OracleGroups g;
    for (int i = 0; i < batch.size(); ++i) {
        if (batch.roles[static_cast<size_t>(i)] == Role::Genuine)
            g.positives[batch.anchor_writer[static_cast<size_t>(i)]].push_back(i);
        else
            g.negatives[batch.anchor_writer[static_cast<size_t>(i)]].push_back(i);
    }
    return g;
}

double lifted_oracle(const std::vector<std::vector<double>>& e, const Batch& batch,
                     double margin) {
    OracleGroups g = group_oracle(batch);
    std::vector<double> terms;
    for (auto& [w, pos] : g.positives) {
        if (pos.size() < 2 || g.negatives[w].empty()) continue;
        for (size_t a = 0; a < pos.size(); ++a)
            for (size_t b = a + 1; b < pos.size(); ++b) {
                double lse = 0.0;
                for (int k : g.negatives[w]) {
                    lse += std::exp(margin - dist_oracle(e[static_cast<size_t>(pos[a])],
                                                         e[static_cast<size_t>(k)]));
                    lse += std::exp(margin - dist_oracle(e[static_cast<size_t>(pos[b])],
                                                         e[static_cast<size_t>(k)]));
                }
                const double j = std::log(lse) + dist_oracle(e[static_cast<size_t>(pos[a])],
                                                             e[static_cast<size_t>(pos[b])]);
                const double hinge = std::max(0.0, j);
                terms.push_back(hinge * hinge);
            }
    }
    double mean = 0.0;
    for (double t : terms) mean += t;
    return 0.5 * mean / static_cast<double>(terms.size());
}

double nang_oracle(const std::vector<std::vector<double>>& e, const Batch& batch, double lambda,
                   double tan_alpha) {
    OracleGroups g = group_oracle(batch);
    const double tan2 = tan_alpha * tan_alpha;
    std::vector<double> np_terms, ang_terms;
    for (auto& [w, pos] : g.positives) {
        if (pos.size() < 2 || g.negatives[w].empty()) continue;
        for (int a : pos)
            for (int p : pos) {
                if (a == p) continue;
                const double ap = dot_oracle(e[static_cast<size_t>(a)], e[static_cast<size_t>(p)]);
                double np = 1.0, ang = 1.0;
                for (int n : g.negatives[w]) {
                    np += std::exp(dot_oracle(e[static_cast<size_t>(a)], e[static_cast<size_t>(n)]) - ap);
                    std::vector<double> apx = e[static_cast<size_t>(a)];
                    for (size_t i = 0; i < apx.size(); ++i) apx[i] += e[static_cast<size_t>(p)][i];
                    ang += std::exp(4.0 * tan2 * dot_oracle(apx, e[static_cast<size_t>(n)]) -
                                    2.0 * (1.0 + tan2) * ap);
                }
                np_terms.push_back(std::log(np));
                ang_terms.push_back(std::log(ang));
            }
    }
    double np_mean = 0.0, ang_mean = 0.0;
    for (double t : np_terms) np_mean += t;
    for (double t : ang_terms) ang_mean += t;
    np_mean /= static_cast<double>(np_terms.size());
    ang_mean /= static_cast<double>(ang_terms.size());
    return np_mean + lambda * ang_mean;
}

// fabricated batch with the sampler's role structure and given embeddings
Batch fake_batch(int writers, int per_role) {
    Batch b;
    for (int w = 0; w < writers; ++w) {
        for (int r = 0; r < per_role; ++r) {
            b.anchor_writer.push_back(w);
            b.roles.push_back(Role::Genuine);
            b.producer_class.push_back(w);
        }
        for (int r = 0; r < per_role; ++r) {
            b.anchor_writer.push_back(w);
            b.roles.push_back(Role::Skilled);
            b.producer_class.push_back((w + 1) % writers);
        }
        for (int r = 0; r < per_role; ++r) {
            b.anchor_writer.push_back(w);
            b.roles.push_back(Role::Random);
            b.producer_class.push_back((w + 2) % writers);
        }
    }
    return b;
}

}  // namespace

TEST_CASE("sample_batch composition follows the 2 x (3+3+3) recipe") {
    TrainDataset ds = tiny_dataset(6, 3, 31);
    TrainConfig cfg;
    SplitMix64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        Batch b = sample_batch(ds, cfg, rng);
        REQUIRE(b.size() == 18);
        std::set<int> anchors(b.anchor_writer.begin(), b.anchor_writer.end());
        CHECK(anchors.size() == 2);
        for (int anchor : anchors) {
            int genuine = 0, skilled = 0, random_f = 0;
            for (int i = 0; i < 18; ++i) {
                if (b.anchor_writer[static_cast<size_t>(i)] != anchor) continue;
                switch (b.roles[static_cast<size_t>(i)]) {
                    case Role::Genuine: ++genuine; break;
                    case Role::Skilled: ++skilled; break;
                    case Role::Random: ++random_f; break;
                }
            }
            CHECK(genuine == 3);
            CHECK(skilled == 3);
            CHECK(random_f == 3);
        }
        // random forgeries never come from the anchor writer
        for (int i = 0; i < 18; ++i)
            if (b.roles[static_cast<size_t>(i)] == Role::Random)
                CHECK(b.seqs[static_cast<size_t>(i)].writer_id !=
                      b.anchor_writer[static_cast<size_t>(i)]);
        // padding mask is 1 exactly on the true steps
        for (int i = 0; i < 18; ++i) {
            for (int t = 0; t < b.max_len; ++t) {
                const bool valid = t < b.lengths[static_cast<size_t>(i)];
                CHECK(b.pad_mask[static_cast<size_t>(i) * b.max_len + t] == (valid ? 1 : 0));
            }
        }
    }
}

TEST_CASE("sample_batch requires at least five writers") {
    TrainDataset ds = tiny_dataset(4, 3, 32);
    TrainConfig cfg;
    SplitMix64 rng(2);
    CHECK_THROWS_AS(sample_batch(ds, cfg, rng), InsufficientWritersError);
}

TEST_CASE("skilled-forgery producers follow the ring pairing") {
    TrainDataset ds = tiny_dataset(6, 2, 33);
    // forger of writer w is w+1; the last writer's forger wraps outside the
    // ring rule and stays unresolved
    for (size_t i = 0; i < ds.traces.size(); ++i) {
        const FeatureSequence& fs = ds.traces[i];
        if (fs.label != Label::SkilledForgery) continue;
        if (fs.writer_id < 5)
            CHECK(ds.producer_class[i] == ds.writer_class.at(fs.writer_id + 1));
        else
            CHECK(ds.producer_class[i] == -1);
    }
}

TEST_CASE("rdel deletes the stated fraction and preserves order") {
    FeatureSequence fs = ramp_sequence(100);
    SplitMix64 rng(7);

    FeatureSequence dropped = rdel(fs, rng, 0.05, 0.05);
    CHECK(dropped.length == 95);
    for (int t = 1; t < dropped.length; ++t)
        CHECK(dropped.at(0, t) > dropped.at(0, t - 1));  // ramp stays increasing

    FeatureSequence untouched = rdel(fs, rng, 0.0, 0.0);
    CHECK(untouched.length == 100);
    CHECK(untouched.data == fs.data);

    FeatureSequence small = ramp_sequence(19);
    FeatureSequence passed = rdel(small, rng, 0.05, 0.075);
    CHECK(passed.length == 19);  // below the minimum length, unchanged
}

TEST_CASE("rdel lengths stay within the rate range") {
    FeatureSequence fs = ramp_sequence(200);
    SplitMix64 rng(8);
    for (int i = 0; i < 50; ++i) {
        FeatureSequence out = rdel(fs, rng, 0.05, 0.075);
        CHECK(out.length <= 200 - 10);
        CHECK(out.length >= 200 - 15);
    }
}

TEST_CASE("metric loss matches the brute-force oracle at batch size 18") {
    Batch batch = fake_batch(2, 3);
    TrainConfig cfg;
    SplitMix64 g(9);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::vector<double>> raw;
        std::vector<Tensor> embs;
        for (int i = 0; i < batch.size(); ++i) {
            std::vector<double> v(6);
            for (double& x : v) x = g.normal(0.0, 1.0);
            raw.push_back(v);
            embs.push_back(embedding_from(v));
        }
        MetricLossParts parts = metric_loss(embs, batch, cfg);
        CHECK(parts.triplet.value() ==
              doctest::Approx(lifted_oracle(raw, batch, cfg.triplet_margin)).epsilon(1e-9));
        CHECK(parts.nang.value() ==
              doctest::Approx(nang_oracle(raw, batch, cfg.angular_lambda, cfg.angular_tan))
                  .epsilon(1e-9));
        CHECK(parts.total.value() ==
              doctest::Approx(cfg.triplet_weight * parts.triplet.value() + parts.nang.value())
                  .epsilon(1e-12));
    }
}

TEST_CASE("metric loss with identical embeddings sits at the margin floor") {
    Batch batch = fake_batch(2, 3);
    TrainConfig cfg;
    std::vector<double> same = {0.3, -0.2, 0.5, 0.1};
    std::vector<std::vector<double>> raw(18, same);
    std::vector<Tensor> embs;
    for (int i = 0; i < 18; ++i) embs.push_back(embedding_from(same));
    MetricLossParts parts = metric_loss(embs, batch, cfg);
    CHECK(parts.triplet.value() ==
          doctest::Approx(lifted_oracle(raw, batch, cfg.triplet_margin)).epsilon(1e-9));
    CHECK(parts.triplet.value() > 0.0);  // margin keeps the floor positive
}

TEST_CASE("triplet term vanishes when negatives are far beyond the margin") {
    Batch batch = fake_batch(1, 2);  // one writer: 2 genuine, 2 skilled, 2 random
    TrainConfig cfg;
    std::vector<Tensor> embs;
    std::vector<double> base = {0.0, 0.0, 0.0};
    embs.push_back(embedding_from(base));
    embs.push_back(embedding_from(base));  // positive pair at distance 0
    for (int k = 0; k < 4; ++k)
        embs.push_back(embedding_from({50.0 + k, 50.0, 50.0}));  // far negatives
    MetricLossParts parts = metric_loss(embs, batch, cfg);
    CHECK(parts.triplet.value() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("metric loss needs a genuine pair") {
    Batch batch;
    batch.anchor_writer = {0, 0};
    batch.roles = {Role::Genuine, Role::Skilled};
    batch.producer_class = {0, 1};
    std::vector<Tensor> embs = {embedding_from({1, 0}), embedding_from({0, 1})};
    CHECK_THROWS_AS(metric_loss(embs, batch, TrainConfig{}), DegenerateBatchError);
}

TEST_CASE("id loss hand values and monotonicity") {
    Batch batch = fake_batch(4, 1);  // 12 samples over 4 writers
    const int n_c = 4;

    SUBCASE("perfect one-hot predictions cost zero") {
        std::vector<Tensor> probs;
        for (int i = 0; i < batch.size(); ++i) {
            std::vector<double> p(n_c, 0.0);
            p[static_cast<size_t>(batch.producer_class[static_cast<size_t>(i)])] = 1.0;
            probs.push_back(Tensor::from({n_c}, std::move(p)));
        }
        CHECK(id_loss(probs, batch, n_c, false).value() == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("uniform predictions cost log N_c per sample") {
        Batch four;
        for (int i = 0; i < 4; ++i) {
            four.anchor_writer.push_back(i);
            four.roles.push_back(Role::Genuine);
            four.producer_class.push_back(i);
        }
        std::vector<Tensor> probs(4, Tensor::constant({n_c}, 0.25));
        // 4 samples, each -log(1/4), normalized by N_c = 4
        CHECK(id_loss(probs, four, n_c, false).value() ==
              doctest::Approx(std::log(4.0)).epsilon(1e-9));
        CHECK(id_loss(probs, four, n_c, true).value() ==
              doctest::Approx(std::log(4.0)).epsilon(1e-9));
    }
    SUBCASE("raising the true-class probability lowers the loss") {
        Batch one;
        one.anchor_writer = {0};
        one.roles = {Role::Genuine};
        one.producer_class = {1};
        std::vector<Tensor> low = {Tensor::from({n_c}, {0.4, 0.2, 0.2, 0.2})};
        std::vector<Tensor> high = {Tensor::from({n_c}, {0.2, 0.6, 0.1, 0.1})};
        CHECK(id_loss(high, one, n_c, false).value() < id_loss(low, one, n_c, false).value());
    }
    SUBCASE("unresolved producers are skipped") {
        Batch one;
        one.anchor_writer = {0, 0};
        one.roles = {Role::Genuine, Role::Skilled};
        one.producer_class = {0, -1};
        std::vector<Tensor> probs = {Tensor::constant({n_c}, 0.25),
                                     Tensor::constant({n_c}, 0.25)};
        CHECK(id_loss(probs, one, n_c, false).value() ==
              doctest::Approx(std::log(4.0) / 4.0).epsilon(1e-9));
    }
    SUBCASE("class count mismatch is a shape error") {
        Batch one;
        one.anchor_writer = {0};
        one.roles = {Role::Genuine};
        one.producer_class = {0};
        std::vector<Tensor> probs = {Tensor::constant({n_c + 1}, 0.2)};
        CHECK_THROWS_AS(id_loss(probs, one, n_c, false), ShapeError);
    }
}

TEST_CASE("batch loss is invariant to extending the zero padding") {
    TrainDataset ds = tiny_dataset(6, 2, 41);
    PavenetParams params = PavenetParams::init(tiny_model_config(6), 42);
    TrainConfig cfg;
    SplitMix64 rng(5);
    Batch batch = sample_batch(ds, cfg, rng, /*augment=*/false);

    const double base = batch_loss(params, batch, cfg).total.value();
    batch.extend_padding(8);
    const double padded = batch_loss(params, batch, cfg).total.value();
    CHECK(std::abs(base - padded) < 1e-6);
}

TEST_CASE("seeded training reproduces the loss trajectory") {
    TrainDataset ds = tiny_dataset(6, 2, 51);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 5;
    cfg.seed = 99;

    PavenetParams p1 = PavenetParams::init(tiny_model_config(6), cfg.seed);
    TrainResult r1 = train(p1, ds, cfg);
    PavenetParams p2 = PavenetParams::init(tiny_model_config(6), cfg.seed);
    TrainResult r2 = train(p2, ds, cfg);

    REQUIRE(r1.log.size() == r2.log.size());
    REQUIRE(r1.log.size() == 10);
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(std::abs(r1.log[i].l_total - r2.log[i].l_total) < 1e-9);
        CHECK(std::abs(r1.log[i].l_tri - r2.log[i].l_tri) < 1e-9);
        CHECK(std::abs(r1.log[i].l_id - r2.log[i].l_id) < 1e-9);
    }
}

TEST_CASE("learning rate decays by the configured factor each epoch") {
    TrainDataset ds = tiny_dataset(5, 2, 61);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.steps_per_epoch = 1;
    PavenetParams params = PavenetParams::init(tiny_model_config(5), 1);
    TrainResult r = train(params, ds, cfg);
    REQUIRE(r.log.size() == 4);
    for (int e = 0; e < 4; ++e)
        CHECK(r.log[static_cast<size_t>(e)].lr ==
              doctest::Approx(0.001 * std::pow(0.95, e)).epsilon(1e-12));
}

TEST_CASE("loss on a frozen batch decreases over 50 steps") {
    TrainDataset ds = tiny_dataset(6, 2, 71);
    PavenetParams params = PavenetParams::init(tiny_model_config(6), 7);
    TrainConfig cfg;
    SplitMix64 rng(3);
    Batch batch = sample_batch(ds, cfg, rng, /*augment=*/false);

    AdamW opt;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
        TrainLogRow row = train_step(params, opt, batch, cfg, cfg.lr0);
        CHECK(std::isfinite(row.l_total));
        if (step == 0) first = row.l_total;
        last = row.l_total;
    }
    CHECK(last < first);
}

TEST_CASE("one training epoch on a small population runs and stays finite") {
    TrainDataset ds = tiny_dataset(6, 2, 81);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 3;
    PavenetParams params = PavenetParams::init(tiny_model_config(6), 2);
    TrainResult r = train(params, ds, cfg);
    for (const TrainLogRow& row : r.log) CHECK(std::isfinite(row.l_total));
}

TEST_CASE("training rejects a head sized for the wrong writer count") {
    TrainDataset ds = tiny_dataset(5, 2, 91);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 1;
    PavenetParams params = PavenetParams::init(tiny_model_config(7), 3);
    CHECK_THROWS_AS(train(params, ds, cfg), InsufficientWritersError);
}
