#pragma once

// Template-and-distance verification, the DTW baseline, and EER/ROC
// computation.
//
// Scores are distances: lower means more genuine. EER is located by sweeping
// candidate thresholds (the observed scores) and linearly interpolating FAR
// and FRR between the two adjacent candidates where FAR - FRR changes sign.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "pavenet/model.hpp"
#include "pavenet/preprocess.hpp"
#include "pavenet/rng.hpp"

namespace pavenet {

struct EmptySequenceError : std::runtime_error { using std::runtime_error::runtime_error; };
struct EmptyPopulationError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InsufficientGenuineError : std::runtime_error { using std::runtime_error::runtime_error; };

// ---------------------------------------------------------------------------
// dynamic time warping
// ---------------------------------------------------------------------------

struct DtwResult {
    double distance = 0.0;     // accumulated cost / path length
    double accumulated = 0.0;  // optimal accumulated frame cost
    std::vector<std::pair<int, int>> path;  // (0,0) ... (La-1, Lb-1), monotone
};

// Classic DP alignment with unit steps (down, right, diagonal) and Euclidean
// frame cost over the 12 channels. The accumulated cost is normalized by the
// warping-path length so strings of different lengths stay comparable.
inline DtwResult dtw_distance(const FeatureSequence& a, const FeatureSequence& b) {
    const int la = a.length, lb = b.length;
    if (la == 0 || lb == 0) throw EmptySequenceError("dtw on empty sequence");

    auto frame_cost = [&](int i, int j) {
        double s = 0.0;
        for (int c = 0; c < FeatureSequence::kChannels; ++c) {
            const double d = a.at(c, i) - b.at(c, j);
            s += d * d;
        }
        return std::sqrt(s);
    };

    std::vector<double> acc(static_cast<size_t>(la) * lb);
    auto at = [&](int i, int j) -> double& { return acc[static_cast<size_t>(i) * lb + j]; };
    at(0, 0) = frame_cost(0, 0);
    for (int i = 1; i < la; ++i) at(i, 0) = frame_cost(i, 0) + at(i - 1, 0);
    for (int j = 1; j < lb; ++j) at(0, j) = frame_cost(0, j) + at(0, j - 1);
    for (int i = 1; i < la; ++i)
        for (int j = 1; j < lb; ++j)
            at(i, j) = frame_cost(i, j) +
                       std::min(at(i - 1, j - 1), std::min(at(i - 1, j), at(i, j - 1)));

    DtwResult res;
    res.accumulated = at(la - 1, lb - 1);
    int i = la - 1, j = lb - 1;
    res.path.emplace_back(i, j);
    while (i > 0 || j > 0) {
        if (i == 0) {
            --j;
        } else if (j == 0) {
            --i;
        } else {
            const double diag = at(i - 1, j - 1), up = at(i - 1, j), left = at(i, j - 1);
            if (diag <= up && diag <= left) {
                --i;
                --j;
            } else if (up <= left) {
                --i;
            } else {
                --j;
            }
        }
        res.path.emplace_back(i, j);
    }
    std::reverse(res.path.begin(), res.path.end());
    res.distance = res.accumulated / static_cast<double>(res.path.size());
    return res;
}

// ---------------------------------------------------------------------------
// template verifier
// ---------------------------------------------------------------------------

namespace detail {

inline double euclidean_vec(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace detail

// Distance-based verification score on arbitrary pairwise distances: mean
// query-to-template distance, divided by the mean pairwise template distance
// when two or more templates are enrolled.
inline double verify_score_with(int num_templates,
                                const std::function<double(int)>& query_template_dist,
                                const std::function<double(int, int)>& template_pair_dist) {
    double query_mean = 0.0;
    for (int i = 0; i < num_templates; ++i) query_mean += query_template_dist(i);
    query_mean /= num_templates;
    if (num_templates < 2) return query_mean;
    double pair_mean = 0.0;
    int pairs = 0;
    for (int i = 0; i < num_templates; ++i)
        for (int j = i + 1; j < num_templates; ++j) {
            pair_mean += template_pair_dist(i, j);
            ++pairs;
        }
    pair_mean /= pairs;
    return pair_mean > 0.0 ? query_mean / pair_mean : query_mean;
}

inline double verify_score(const std::vector<double>& query,
                           const std::vector<std::vector<double>>& templates) {
    if (templates.empty()) throw EmptyPopulationError("verify_score: no templates");
    return verify_score_with(
        static_cast<int>(templates.size()),
        [&](int i) { return detail::euclidean_vec(query, templates[static_cast<size_t>(i)]); },
        [&](int i, int j) {
            return detail::euclidean_vec(templates[static_cast<size_t>(i)],
                                         templates[static_cast<size_t>(j)]);
        });
}

// ---------------------------------------------------------------------------
// template selection
// ---------------------------------------------------------------------------

enum class Protocol { FourVsOne, OneVsOne };

struct TemplateSplit {
    std::vector<int> templates;  // indices into the writer's genuine list
    std::vector<int> queries;
};

// Splits a writer's genuine samples (given their session per sample, in
// acquisition order) into enrolled templates and genuine queries.
// FourVsOne across sessions enrolls the first two samples of each session;
// single-session enrolls the first four. OneVsOne enumerates every genuine
// sample as the single template with all remaining genuine as queries.
inline std::vector<TemplateSplit> select_templates(const std::vector<int>& sessions,
                                                   Protocol protocol, bool across_session) {
    const int n = static_cast<int>(sessions.size());
    std::vector<TemplateSplit> splits;
    if (protocol == Protocol::FourVsOne) {
        TemplateSplit split;
        if (across_session) {
            std::vector<int> s1, s2;
            for (int i = 0; i < n; ++i) (sessions[static_cast<size_t>(i)] == 1 ? s1 : s2).push_back(i);
            if (s1.size() < 2 || s2.size() < 2)
                throw InsufficientGenuineError(
                    "4 vs 1 across sessions needs two genuine samples per session");
            split.templates = {s1[0], s1[1], s2[0], s2[1]};
        } else {
            if (n < 4)
                throw InsufficientGenuineError("4 vs 1 needs at least four genuine samples");
            split.templates = {0, 1, 2, 3};
        }
        for (int i = 0; i < n; ++i)
            if (std::find(split.templates.begin(), split.templates.end(), i) ==
                split.templates.end())
                split.queries.push_back(i);
        if (split.queries.empty())
            throw InsufficientGenuineError("4 vs 1 leaves no genuine queries");
        splits.push_back(std::move(split));
    } else {
        if (n < 2) throw InsufficientGenuineError("1 vs 1 needs at least two genuine samples");
        for (int t = 0; t < n; ++t) {
            TemplateSplit split;
            split.templates = {t};
            for (int i = 0; i < n; ++i)
                if (i != t) split.queries.push_back(i);
            splits.push_back(std::move(split));
        }
    }
    return splits;
}

// ---------------------------------------------------------------------------
// EER
// ---------------------------------------------------------------------------

struct ScoreSet {
    struct WriterScores {
        int writer_id = 0;
        std::vector<double> genuine, skilled, random;
    };
    std::vector<WriterScores> writers;
};

struct RocPoint {
    double threshold = 0.0, far = 0.0, frr = 0.0;
};

struct EerResult {
    double eer_global = 0.0;   // percent
    double eer_local = 0.0;    // percent, averaged per-writer EERs
    double threshold_global = 0.0;
    std::vector<double> thresholds_local;
    std::vector<RocPoint> roc;  // pooled sweep
};

namespace detail {

struct EerPoint {
    double eer = 0.0;  // fraction, not percent
    double threshold = 0.0;
};

// Threshold sweep over the observed scores. FAR(t) = P(impostor <= t),
// FRR(t) = P(genuine > t); the crossing is located by linear interpolation
// between the adjacent candidates where FAR - FRR changes sign.
inline EerPoint eer_sweep(const std::vector<double>& genuine,
                          const std::vector<double>& impostor,
                          std::vector<RocPoint>* roc = nullptr) {
    if (genuine.empty() || impostor.empty())
        throw EmptyPopulationError("eer needs non-empty genuine and impostor populations");

    std::vector<double> candidates;
    candidates.reserve(genuine.size() + impostor.size());
    candidates.insert(candidates.end(), genuine.begin(), genuine.end());
    candidates.insert(candidates.end(), impostor.begin(), impostor.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    const double ng = static_cast<double>(genuine.size());
    const double ni = static_cast<double>(impostor.size());
    auto level = [&](double t, double& far, double& frr) {
        size_t acc = 0;
        for (double s : impostor) acc += s <= t ? 1 : 0;
        far = static_cast<double>(acc) / ni;
        size_t rej = 0;
        for (double s : genuine) rej += s > t ? 1 : 0;
        frr = static_cast<double>(rej) / ng;
    };

    double prev_far = 0.0, prev_frr = 1.0;  // virtual point below every score
    double prev_t = candidates.front() - 1.0;
    EerPoint out;
    bool found = false;
    for (double t : candidates) {
        double far, frr;
        level(t, far, frr);
        if (roc) roc->push_back({t, far, frr});
        if (!found) {
            const double diff = far - frr;
            if (diff >= 0.0) {
                if (diff == 0.0) {
                    out.eer = far;
                    out.threshold = t;
                } else {
                    const double denom = (far - prev_far) - (frr - prev_frr);
                    const double u = (prev_frr - prev_far) / denom;
                    out.eer = prev_far + u * (far - prev_far);
                    out.threshold = prev_t + u * (t - prev_t);
                }
                found = true;
                if (!roc) break;
            }
            prev_far = far;
            prev_frr = frr;
            prev_t = t;
        }
    }
    if (!found) {  // FAR stayed below FRR through every candidate
        out.eer = prev_frr;
        out.threshold = candidates.back();
    }
    return out;
}

}  // namespace detail

enum class ForgeryKind { Skilled, Random };

// Global mode pools every writer's scores under one threshold; local mode
// computes a per-writer EER and averages. Results are percentages.
inline EerResult compute_eer(const ScoreSet& scores, ForgeryKind kind) {
    std::vector<double> all_gen, all_imp;
    std::vector<double> local_eers;
    EerResult out;
    for (const auto& w : scores.writers) {
        const std::vector<double>& imp = kind == ForgeryKind::Skilled ? w.skilled : w.random;
        all_gen.insert(all_gen.end(), w.genuine.begin(), w.genuine.end());
        all_imp.insert(all_imp.end(), imp.begin(), imp.end());
        detail::EerPoint p = detail::eer_sweep(w.genuine, imp);
        local_eers.push_back(p.eer);
        out.thresholds_local.push_back(p.threshold);
    }
    detail::EerPoint g = detail::eer_sweep(all_gen, all_imp, &out.roc);
    out.eer_global = 100.0 * g.eer;
    out.threshold_global = g.threshold;
    double mean = 0.0;
    for (double e : local_eers) mean += e;
    out.eer_local = 100.0 * mean / static_cast<double>(local_eers.size());
    return out;
}

// ---------------------------------------------------------------------------
// evaluation harness
// ---------------------------------------------------------------------------

struct EvalOptions {
    Protocol protocol = Protocol::FourVsOne;
    bool across_session = true;
    bool baseline_dtw = false;   // score feature sequences with DTW, no model
    int random_cap = 50;         // random-forgery queries per writer
    uint64_t seed = 0;
    int threads = 1;
};

struct EvalReport {
    ScoreSet scores;
    EerResult skilled, random;
};

namespace detail {

struct WriterData {
    int writer_id = 0;
    std::vector<const FeatureSequence*> genuine;  // session-1 first, acquisition order
    std::vector<int> sessions;
    std::vector<const FeatureSequence*> skilled;
};

inline std::vector<WriterData> group_by_writer(const std::vector<FeatureSequence>& traces) {
    std::map<int, WriterData> by_writer;
    for (int session = 1; session <= 2; ++session)
        for (const FeatureSequence& fs : traces) {
            if (fs.session != session) continue;
            WriterData& w = by_writer[fs.writer_id];
            w.writer_id = fs.writer_id;
            if (fs.label == Label::Genuine) {
                w.genuine.push_back(&fs);
                w.sessions.push_back(session);
            } else {
                w.skilled.push_back(&fs);
            }
        }
    std::vector<WriterData> out;
    out.reserve(by_writer.size());
    for (auto& [id, w] : by_writer) out.push_back(std::move(w));
    return out;
}

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const int workers = std::min(threads, n);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    for (std::thread& t : pool) t.join();
}

}  // namespace detail

// Scores a disjoint test population under the chosen protocol. Random
// impostors for a writer are genuine traces of the other test writers,
// subsampled deterministically to `random_cap`. When `model` is null the
// DTW baseline scores raw feature sequences; otherwise queries are scored
// in embedding space.
inline EvalReport evaluate(PavenetParams* model, const std::vector<FeatureSequence>& test_traces,
                           const EvalOptions& opts) {
    auto writers = detail::group_by_writer(test_traces);
    if (writers.empty()) throw EmptyPopulationError("no test writers");

    // embeddings computed once per trace (model mode)
    std::map<const FeatureSequence*, std::vector<double>> embedding;
    if (model) {
        std::vector<const FeatureSequence*> all;
        for (const FeatureSequence& fs : test_traces) all.push_back(&fs);
        std::vector<std::vector<double>> slots(all.size());
        detail::parallel_for(static_cast<int>(all.size()), opts.threads, [&](int i) {
            slots[static_cast<size_t>(i)] = embed(*model, *all[static_cast<size_t>(i)]);
        });
        for (size_t i = 0; i < all.size(); ++i) embedding[all[i]] = std::move(slots[i]);
    }

    auto pair_distance = [&](const FeatureSequence* a, const FeatureSequence* b) {
        if (model) return detail::euclidean_vec(embedding.at(a), embedding.at(b));
        return dtw_distance(*a, *b).distance;
    };

    EvalReport report;
    report.scores.writers.resize(writers.size());

    detail::parallel_for(static_cast<int>(writers.size()), opts.threads, [&](int wi) {
        const detail::WriterData& w = writers[static_cast<size_t>(wi)];
        ScoreSet::WriterScores ws;
        ws.writer_id = w.writer_id;

        auto splits = select_templates(w.sessions, opts.protocol, opts.across_session);

        // random-forgery query pool: other writers' genuine traces, capped
        std::vector<const FeatureSequence*> random_pool;
        for (const auto& other : writers) {
            if (other.writer_id == w.writer_id) continue;
            random_pool.insert(random_pool.end(), other.genuine.begin(), other.genuine.end());
        }
        if (static_cast<int>(random_pool.size()) > opts.random_cap) {
            SplitMix64 rg(mix_seed(opts.seed, 0x2a7d0, static_cast<uint64_t>(w.writer_id)));
            rg.shuffle(random_pool);
            random_pool.resize(static_cast<size_t>(opts.random_cap));
        }

        for (const TemplateSplit& split : splits) {
            std::vector<const FeatureSequence*> tmpl;
            for (int ti : split.templates) tmpl.push_back(w.genuine[static_cast<size_t>(ti)]);
            auto score_query = [&](const FeatureSequence* q) {
                return verify_score_with(
                    static_cast<int>(tmpl.size()),
                    [&](int i) { return pair_distance(q, tmpl[static_cast<size_t>(i)]); },
                    [&](int i, int j) {
                        return pair_distance(tmpl[static_cast<size_t>(i)],
                                             tmpl[static_cast<size_t>(j)]);
                    });
            };
            for (int qi : split.queries)
                ws.genuine.push_back(score_query(w.genuine[static_cast<size_t>(qi)]));
            for (const FeatureSequence* f : w.skilled) ws.skilled.push_back(score_query(f));
            for (const FeatureSequence* r : random_pool) ws.random.push_back(score_query(r));
        }
        report.scores.writers[static_cast<size_t>(wi)] = std::move(ws);
    });

    report.skilled = compute_eer(report.scores, ForgeryKind::Skilled);
    report.random = compute_eer(report.scores, ForgeryKind::Random);
    return report;
}

// ---------------------------------------------------------------------------
// exports
// ---------------------------------------------------------------------------

inline void write_scores_csv(const ScoreSet& scores, Protocol protocol, std::ostream& out) {
    const char* proto = protocol == Protocol::FourVsOne ? "4v1" : "1v1";
    out << "writer_id,protocol,role,score\n";
    for (const auto& w : scores.writers) {
        for (double s : w.genuine)
            out << w.writer_id << ',' << proto << ",genuine," << detail::format_double(s) << '\n';
        for (double s : w.skilled)
            out << w.writer_id << ',' << proto << ",skilled," << detail::format_double(s) << '\n';
        for (double s : w.random)
            out << w.writer_id << ',' << proto << ",random," << detail::format_double(s) << '\n';
    }
}

inline void write_roc_csv(const EerResult& skilled, const EerResult& random, std::ostream& out) {
    out << "forgery,threshold,FAR,FRR\n";
    for (const RocPoint& p : skilled.roc)
        out << "skilled," << detail::format_double(p.threshold) << ','
            << detail::format_double(p.far) << ',' << detail::format_double(p.frr) << '\n';
    for (const RocPoint& p : random.roc)
        out << "random," << detail::format_double(p.threshold) << ','
            << detail::format_double(p.far) << ',' << detail::format_double(p.frr) << '\n';
}

inline void write_report(const EvalReport& report, Protocol protocol, bool across_session,
                         const std::string& system, std::ostream& out) {
    char line[160];
    out << "system: " << system << "\n";
    out << "protocol: " << (protocol == Protocol::FourVsOne ? "4 vs 1" : "1 vs 1")
        << (across_session ? ", across-session" : ", single-session") << "\n";
    out << "format: EER_g/EER_l (%)\n";
    std::snprintf(line, sizeof(line), "skilled forgery: %.2f/%.2f\n", report.skilled.eer_global,
                  report.skilled.eer_local);
    out << line;
    std::snprintf(line, sizeof(line), "random forgery:  %.2f/%.2f\n", report.random.eer_global,
                  report.random.eer_local);
    out << line;
}

}  // namespace pavenet
