#pragma once

// Training loop: the 2x(3+3+3) batch sampler, R-Del time-point deletion,
// zero end-padding, the coordinated metric loss (lifted-structure triplet +
// N-pair-with-angular), the writer-ID cross entropy, and AdamW with
// per-epoch learning-rate decay, gradient clipping and decoupled weight
// decay.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pavenet/model.hpp"
#include "pavenet/preprocess.hpp"
#include "pavenet/rng.hpp"
#include "pavenet/tensor.hpp"
#include "pavenet/trace_io.hpp"

namespace pavenet {

struct InsufficientWritersError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DegenerateBatchError : std::runtime_error { using std::runtime_error::runtime_error; };

struct TrainConfig {
    int epochs = 30;               // paper-scale: 300
    int steps_per_epoch = 50;
    double lr0 = 0.001;
    double lr_decay = 0.95;        // multiplied in after each epoch
    double triplet_weight = 0.1;
    double triplet_margin = 0.5;
    double angular_lambda = 1.0;
    double angular_tan = 1.0;      // tan of the angular-loss angle (45 degrees)
    double rdel_lo = 0.05;
    double rdel_hi = 0.075;
    double weight_decay = 1e-4;
    double clip_norm = 5.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool id_loss_batch_mean = false;  // divide by included samples instead of N_c
    uint64_t seed = 1;
    int writers_per_batch = 2;
    int per_role = 3;

    void validate() const {
        if (!(lr_decay > 0.0 && lr_decay <= 1.0))
            throw std::invalid_argument("lr_decay must be in (0, 1]");
        if (!(0.0 <= rdel_lo && rdel_lo <= rdel_hi && rdel_hi < 1.0))
            throw std::invalid_argument("rdel range must satisfy 0 <= lo <= hi < 1");
        if (epochs < 0 || steps_per_epoch < 1)
            throw std::invalid_argument("bad epoch/step counts");
    }
};

enum class Role { Genuine, Skilled, Random };

// Preprocessed training set indexed by writer. Writer classes are contiguous
// indices over the manifest's writer set. The producer of a skilled forgery
// follows the generator's ring pairing (forger of w is w+1); when that
// writer is outside this dataset the producer is unresolved (-1) and the
// sample is skipped by the ID loss.
struct TrainDataset {
    std::vector<FeatureSequence> traces;
    std::vector<int> producer_class;        // per trace; -1 if unresolved
    std::vector<int> writers;               // sorted writer ids
    std::map<int, int> writer_class;        // writer id -> class index
    std::map<int, std::vector<int>> genuine_by_writer;   // writer id -> trace indices
    std::map<int, std::vector<int>> skilled_by_writer;

    int num_classes() const { return static_cast<int>(writers.size()); }

    static TrainDataset from_features(std::vector<FeatureSequence> features) {
        TrainDataset ds;
        ds.traces = std::move(features);
        for (const FeatureSequence& fs : ds.traces) {
            if (ds.writer_class.emplace(fs.writer_id, 0).second) ds.writers.push_back(fs.writer_id);
        }
        std::sort(ds.writers.begin(), ds.writers.end());
        for (size_t i = 0; i < ds.writers.size(); ++i)
            ds.writer_class[ds.writers[i]] = static_cast<int>(i);

        ds.producer_class.assign(ds.traces.size(), -1);
        for (size_t i = 0; i < ds.traces.size(); ++i) {
            const FeatureSequence& fs = ds.traces[i];
            if (fs.label == Label::Genuine) {
                ds.genuine_by_writer[fs.writer_id].push_back(static_cast<int>(i));
                ds.producer_class[i] = ds.writer_class[fs.writer_id];
            } else {
                ds.skilled_by_writer[fs.writer_id].push_back(static_cast<int>(i));
                auto it = ds.writer_class.find(fs.writer_id + 1);
                ds.producer_class[i] = it != ds.writer_class.end() ? it->second : -1;
            }
        }
        return ds;
    }

    static TrainDataset load(const DatasetManifest& manifest) {
        std::vector<FeatureSequence> features;
        features.reserve(manifest.entries.size());
        for (const ManifestEntry& e : manifest.entries) {
            RawTrace t = load_trace(manifest.base_dir / e.path);
            t.writer_id = e.writer_id;
            t.session = e.session;
            t.label = e.label;
            features.push_back(preprocess_trace(t));
        }
        return from_features(std::move(features));
    }
};

// R-Del augmentation: deletes round(r * L) uniformly chosen time points,
// r drawn from [lo, hi]. Sequences shorter than 20 pass through unchanged;
// surviving points keep their order.
inline FeatureSequence rdel(const FeatureSequence& fs, SplitMix64& rng, double lo, double hi) {
    const int L = fs.length;
    if (L < 20 || hi <= 0.0) return fs;
    const double r = rng.uniform(lo, hi);
    const int drop = static_cast<int>(std::lround(r * L));
    if (drop <= 0) return fs;

    std::vector<int> doomed = rng.sample_indices(L, drop);
    std::vector<bool> keep(static_cast<size_t>(L), true);
    for (int i : doomed) keep[static_cast<size_t>(i)] = false;

    FeatureSequence out;
    out.length = L - drop;
    out.writer_id = fs.writer_id;
    out.session = fs.session;
    out.label = fs.label;
    out.data.resize(static_cast<size_t>(FeatureSequence::kChannels) * out.length);
    for (int c = 0; c < FeatureSequence::kChannels; ++c) {
        int w = 0;
        for (int t = 0; t < L; ++t)
            if (keep[static_cast<size_t>(t)]) out.at(c, w++) = fs.at(c, t);
    }
    return out;
}

struct Batch {
    std::vector<FeatureSequence> seqs;   // after augmentation
    std::vector<int> anchor_writer;      // writer the sample belongs to in the batch
    std::vector<Role> roles;
    std::vector<int> producer_class;     // class of the true producer, -1 unresolved

    // Padded container: B x 12 x max_len, zero beyond each true length.
    std::vector<double> padded;
    std::vector<int> lengths;
    std::vector<uint8_t> pad_mask;       // B x max_len, 0 exactly at padded steps
    int max_len = 0;

    int size() const { return static_cast<int>(roles.size()); }

    // Appends `extra` zero-padded steps to every row of the container; true
    // lengths and the mask keep the padding out of the model.
    void extend_padding(int extra) {
        const size_t B = static_cast<size_t>(size());
        const int new_len = max_len + extra;
        std::vector<double> grown(B * FeatureSequence::kChannels * static_cast<size_t>(new_len),
                                  0.0);
        std::vector<uint8_t> grown_mask(B * static_cast<size_t>(new_len), 0);
        for (size_t b = 0; b < B; ++b) {
            for (int c = 0; c < FeatureSequence::kChannels; ++c)
                for (int t = 0; t < max_len; ++t)
                    grown[(b * FeatureSequence::kChannels + static_cast<size_t>(c)) *
                              static_cast<size_t>(new_len) +
                          static_cast<size_t>(t)] =
                        padded[(b * FeatureSequence::kChannels + static_cast<size_t>(c)) *
                                   static_cast<size_t>(max_len) +
                               static_cast<size_t>(t)];
            for (int t = 0; t < lengths[b]; ++t)
                grown_mask[b * static_cast<size_t>(new_len) + static_cast<size_t>(t)] = 1;
        }
        padded = std::move(grown);
        pad_mask = std::move(grown_mask);
        max_len = new_len;
    }

    void build_padding() {
        max_len = 0;
        lengths.clear();
        for (const FeatureSequence& fs : seqs) {
            lengths.push_back(fs.length);
            max_len = std::max(max_len, fs.length);
        }
        const size_t B = seqs.size();
        padded.assign(B * FeatureSequence::kChannels * static_cast<size_t>(max_len), 0.0);
        pad_mask.assign(B * static_cast<size_t>(max_len), 0);
        for (size_t b = 0; b < B; ++b) {
            const FeatureSequence& fs = seqs[b];
            for (int c = 0; c < FeatureSequence::kChannels; ++c)
                for (int t = 0; t < fs.length; ++t)
                    padded[(b * FeatureSequence::kChannels + static_cast<size_t>(c)) *
                               static_cast<size_t>(max_len) +
                           static_cast<size_t>(t)] = fs.at(c, t);
            for (int t = 0; t < fs.length; ++t)
                pad_mask[b * static_cast<size_t>(max_len) + static_cast<size_t>(t)] = 1;
        }
    }
};

// Samples the paper batch: two anchor writers, each contributing three
// genuine samples, three skilled forgeries and three random forgeries (one
// genuine sample from each of three other writers). Applies R-Del and
// builds the padded container.
inline Batch sample_batch(const TrainDataset& ds, const TrainConfig& cfg, SplitMix64& rng,
                          bool augment = true) {
    const int W = static_cast<int>(ds.writers.size());
    if (W < 5)
        throw InsufficientWritersError("batch sampling needs at least 5 writers, have " +
                                       std::to_string(W));
    Batch batch;

    std::vector<int> anchors = rng.sample_indices(W, cfg.writers_per_batch);
    for (int a : anchors) {
        const int writer = ds.writers[static_cast<size_t>(a)];
        const auto& genuine = ds.genuine_by_writer.at(writer);
        const auto& skilled = ds.skilled_by_writer.at(writer);
        if (static_cast<int>(genuine.size()) < cfg.per_role ||
            static_cast<int>(skilled.size()) < cfg.per_role)
            throw InsufficientWritersError("writer " + std::to_string(writer) +
                                           " lacks samples for a batch");

        auto pick = [&](const std::vector<int>& pool, Role role) {
            std::vector<int> chosen =
                rng.sample_indices(static_cast<int>(pool.size()), cfg.per_role);
            for (int ci : chosen) {
                const int idx = pool[static_cast<size_t>(ci)];
                batch.seqs.push_back(ds.traces[static_cast<size_t>(idx)]);
                batch.anchor_writer.push_back(writer);
                batch.roles.push_back(role);
                batch.producer_class.push_back(ds.producer_class[static_cast<size_t>(idx)]);
            }
        };
        pick(genuine, Role::Genuine);
        pick(skilled, Role::Skilled);

        // three random forgeries: one genuine trace from each of three donors
        std::vector<int> donors;
        for (int w : ds.writers)
            if (w != writer) donors.push_back(w);
        rng.shuffle(donors);
        for (int d = 0; d < cfg.per_role; ++d) {
            const auto& donor_gen = ds.genuine_by_writer.at(donors[static_cast<size_t>(d)]);
            const int idx =
                donor_gen[static_cast<size_t>(rng.next_below(donor_gen.size()))];
            batch.seqs.push_back(ds.traces[static_cast<size_t>(idx)]);
            batch.anchor_writer.push_back(writer);
            batch.roles.push_back(Role::Random);
            batch.producer_class.push_back(ds.producer_class[static_cast<size_t>(idx)]);
        }
    }

    if (augment)
        for (FeatureSequence& fs : batch.seqs) fs = rdel(fs, rng, cfg.rdel_lo, cfg.rdel_hi);
    batch.build_padding();
    return batch;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

struct MetricLossParts {
    Tensor total, triplet, nang;
};

namespace detail {

inline Tensor euclidean(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return sqrt_eps(dot(d, d), 1e-12);
}

}  // namespace detail

// Coordinated metric loss over a batch of embeddings. Positives are
// same-writer genuine pairs; the negatives of a writer are its skilled and
// random forgeries in the batch. Combines the lifted-structure triplet loss
// (weighted by triplet_weight) with the N-pair-plus-angular loss, both on
// the raw embeddings; the log-sum-exp forms concentrate on the hardest
// in-batch negatives.
inline MetricLossParts metric_loss(const std::vector<Tensor>& embeddings, const Batch& batch,
                                   const TrainConfig& cfg) {
    struct WriterGroup {
        std::vector<int> positives, negatives;
    };
    std::map<int, WriterGroup> groups;
    for (int i = 0; i < batch.size(); ++i) {
        WriterGroup& g = groups[batch.anchor_writer[static_cast<size_t>(i)]];
        if (batch.roles[static_cast<size_t>(i)] == Role::Genuine)
            g.positives.push_back(i);
        else
            g.negatives.push_back(i);
    }

    bool has_pair = false;
    for (const auto& [w, g] : groups) has_pair = has_pair || g.positives.size() >= 2;
    if (!has_pair) throw DegenerateBatchError("metric loss requires a genuine pair");

    // lifted-structure triplet: per unordered positive pair (i, j),
    //   J = log(sum_k exp(margin - D_ik) + exp(margin - D_jk)) + D_ij,
    // loss = mean over pairs of max(0, J)^2 / 2
    std::vector<Tensor> pair_terms;
    // N-pair and angular terms share the ordered pair enumeration
    std::vector<Tensor> npair_terms, angular_terms;
    const double tan2 = cfg.angular_tan * cfg.angular_tan;

    for (const auto& [w, g] : groups) {
        if (g.positives.size() < 2 || g.negatives.empty()) continue;
        for (size_t a = 0; a < g.positives.size(); ++a) {
            for (size_t b = a + 1; b < g.positives.size(); ++b) {
                const int i = g.positives[a], j = g.positives[b];
                std::vector<Tensor> cands;
                for (int k : g.negatives) {
                    Tensor dik = detail::euclidean(embeddings[static_cast<size_t>(i)],
                                                   embeddings[static_cast<size_t>(k)]);
                    Tensor djk = detail::euclidean(embeddings[static_cast<size_t>(j)],
                                                   embeddings[static_cast<size_t>(k)]);
                    cands.push_back(scalar_affine(dik, -1.0, cfg.triplet_margin));
                    cands.push_back(scalar_affine(djk, -1.0, cfg.triplet_margin));
                }
                Tensor j_ij = add(logsumexp(cands),
                                  detail::euclidean(embeddings[static_cast<size_t>(i)],
                                                    embeddings[static_cast<size_t>(j)]));
                Tensor hinge = relu(j_ij);
                pair_terms.push_back(mul(hinge, hinge));
            }
        }
        for (int a : g.positives) {
            for (int p : g.positives) {
                if (p == a) continue;
                const Tensor& xa = embeddings[static_cast<size_t>(a)];
                const Tensor& xp = embeddings[static_cast<size_t>(p)];
                Tensor ap = dot(xa, xp);
                std::vector<Tensor> np_terms = {Tensor::scalar(0.0)};
                std::vector<Tensor> ang_terms = {Tensor::scalar(0.0)};
                for (int n : g.negatives) {
                    const Tensor& xn = embeddings[static_cast<size_t>(n)];
                    np_terms.push_back(sub(dot(xa, xn), ap));
                    // f_ang = 4 tan^2(alpha) (xa + xp).xn - 2 (1 + tan^2(alpha)) xa.xp
                    Tensor f_ang = sub(scalar_affine(dot(add(xa, xp), xn), 4.0 * tan2, 0.0),
                                       scalar_affine(ap, 2.0 * (1.0 + tan2), 0.0));
                    ang_terms.push_back(f_ang);
                }
                npair_terms.push_back(logsumexp(np_terms));
                angular_terms.push_back(logsumexp(ang_terms));
            }
        }
    }

    auto average = [](std::vector<Tensor> terms) {
        Tensor s = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
        return scalar_affine(s, 1.0 / static_cast<double>(terms.size()), 0.0);
    };

    MetricLossParts parts;
    parts.triplet = scalar_affine(average(std::move(pair_terms)), 0.5, 0.0);
    Tensor npair = average(std::move(npair_terms));
    Tensor angular = average(std::move(angular_terms));
    parts.nang = add(npair, scalar_affine(angular, cfg.angular_lambda, 0.0));
    parts.total = add(scalar_affine(parts.triplet, cfg.triplet_weight, 0.0), parts.nang);
    return parts;
}

// Writer-ID cross entropy over head probabilities. Every sample with a
// resolvable producer participates: genuine samples and random forgeries
// carry their own writer, skilled forgeries their imitator. Normalized by
// N_c as the objective is written, or by the participating sample count
// when batch_mean is set.
inline Tensor id_loss(const std::vector<Tensor>& probabilities, const Batch& batch,
                      int num_classes, bool batch_mean) {
    if (probabilities.size() != static_cast<size_t>(batch.size()))
        throw ShapeError("id_loss: probability count mismatch");
    std::vector<Tensor> terms;
    for (int i = 0; i < batch.size(); ++i) {
        const int cls = batch.producer_class[static_cast<size_t>(i)];
        if (cls < 0) continue;
        const Tensor& p = probabilities[static_cast<size_t>(i)];
        if (p.dim(0) != num_classes) throw ShapeError("id_loss: class count mismatch");
        Tensor picked = slice_rows(reshape(p, {num_classes, 1}), cls, cls + 1);
        terms.push_back(scalar_affine(log_op(scalar_affine(reshape(picked, {1}), 1.0, 1e-300)),
                                      -1.0, 0.0));
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    Tensor s = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
    const double denom = batch_mean ? static_cast<double>(terms.size())
                                    : static_cast<double>(num_classes);
    return scalar_affine(s, 1.0 / denom, 0.0);
}

// ---------------------------------------------------------------------------
// optimizer and loop
// ---------------------------------------------------------------------------

// AdamW: adaptive moments on the gradient, weight decay applied directly to
// the parameters (decoupled), optional global-norm clipping before the step.
struct AdamW {
    std::vector<std::vector<double>> m, v;
    long step_count = 0;

    void step(const std::vector<Tensor*>& params, const TrainConfig& cfg, double lr) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i]->numel(), 0.0);
                v[i].assign(params[i]->numel(), 0.0);
            }
        }
        double scale = 1.0;
        if (cfg.clip_norm > 0.0) {
            const double norm = grad_norm(params);
            if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
        }
        ++step_count;
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& val = params[i]->values();
            auto& g = params[i]->grad();
            for (size_t j = 0; j < val.size(); ++j) {
                const double gj = g[j] * scale;
                m[i][j] = cfg.adam_beta1 * m[i][j] + (1.0 - cfg.adam_beta1) * gj;
                v[i][j] = cfg.adam_beta2 * v[i][j] + (1.0 - cfg.adam_beta2) * gj * gj;
                const double mhat = m[i][j] / bc1;
                const double vhat = v[i][j] / bc2;
                val[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                                cfg.weight_decay * val[j]);
            }
        }
    }
};

struct TrainLogRow {
    int epoch = 0, step = 0;
    double l_tri = 0, l_nang = 0, l_id = 0, l_total = 0, lr = 0;
};

inline void write_train_log_header(std::ostream& out) {
    out << "epoch,step,L_tri,L_nang,L_ID,L_total,lr\n";
}

inline void write_train_log_row(std::ostream& out, const TrainLogRow& r) {
    out << r.epoch << ',' << r.step << ',' << detail::format_double(r.l_tri) << ','
        << detail::format_double(r.l_nang) << ',' << detail::format_double(r.l_id) << ','
        << detail::format_double(r.l_total) << ',' << detail::format_double(r.lr) << '\n';
}

// Model input for one batch row: the padded container sliced back to the
// row's true length, so padding never reaches the network.
inline Tensor batch_input(const Batch& batch, int b) {
    const int L = batch.lengths[static_cast<size_t>(b)];
    std::vector<double> v(static_cast<size_t>(FeatureSequence::kChannels) * L);
    for (int c = 0; c < FeatureSequence::kChannels; ++c)
        for (int t = 0; t < L; ++t)
            v[static_cast<size_t>(c) * L + t] =
                batch.padded[(static_cast<size_t>(b) * FeatureSequence::kChannels +
                              static_cast<size_t>(c)) *
                                 static_cast<size_t>(batch.max_len) +
                             static_cast<size_t>(t)];
    return Tensor::from({FeatureSequence::kChannels, L}, std::move(v));
}

struct BatchLoss {
    MetricLossParts metric;
    Tensor id;
    Tensor total;
};

inline BatchLoss batch_loss(PavenetParams& params, const Batch& batch, const TrainConfig& cfg) {
    std::vector<Tensor> embeddings, probabilities;
    embeddings.reserve(static_cast<size_t>(batch.size()));
    probabilities.reserve(static_cast<size_t>(batch.size()));
    for (int b = 0; b < batch.size(); ++b) {
        Tensor f = embed_tensor(params, batch_input(batch, b), /*training=*/true);
        embeddings.push_back(f);
        probabilities.push_back(head_forward(params, f));
    }
    BatchLoss out;
    out.metric = metric_loss(embeddings, batch, cfg);
    out.id = id_loss(probabilities, batch, std::max(1, params.cfg.num_writers),
                     cfg.id_loss_batch_mean);
    out.total = add(out.metric.total, out.id);
    return out;
}

// One optimizer step on a prepared batch: forward every sequence at its true
// length, combine the losses, backprop, update.
inline TrainLogRow train_step(PavenetParams& params, AdamW& opt, const Batch& batch,
                              const TrainConfig& cfg, double lr) {
    BatchLoss loss = batch_loss(params, batch, cfg);

    TrainLogRow row;
    row.l_tri = loss.metric.triplet.value();
    row.l_nang = loss.metric.nang.value();
    row.l_id = loss.id.value();
    row.l_total = loss.total.value();
    row.lr = lr;

    backward(loss.total);
    std::vector<Tensor*> plist;
    for (auto& [name, t] : params.named_parameters()) plist.push_back(t);
    opt.step(plist, cfg, lr);
    for (Tensor* t : plist) t->zero_grad();
    return row;
}

struct TrainResult {
    std::vector<TrainLogRow> log;
};

// Full optimization run. The learning rate at epoch e is lr0 * decay^e.
inline TrainResult train(PavenetParams& params, const TrainDataset& dataset,
                         const TrainConfig& cfg, std::ostream* log_csv = nullptr,
                         std::ostream* progress = nullptr) {
    cfg.validate();
    if (params.cfg.num_writers != dataset.num_classes())
        throw InsufficientWritersError("model head width does not match dataset writer count");
    SplitMix64 rng(mix_seed(cfg.seed, 0x7a41));
    AdamW opt;
    TrainResult result;
    if (log_csv) write_train_log_header(*log_csv);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch));
        double epoch_loss = 0.0;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            Batch batch = sample_batch(dataset, cfg, rng);
            TrainLogRow row = train_step(params, opt, batch, cfg, lr);
            row.epoch = epoch;
            row.step = step;
            epoch_loss += row.l_total;
            if (log_csv) write_train_log_row(*log_csv, row);
            result.log.push_back(row);
        }
        if (progress)
            (*progress) << "epoch " << epoch << " lr " << lr << " mean loss "
                        << epoch_loss / cfg.steps_per_epoch << "\n";
    }
    return result;
}

}  // namespace pavenet
