#pragma once

// The verification network: a 1D backbone with channel-split blocks and
// densely aggregated time-delay scaling blocks, a discriminative pattern
// mining branch (key-point segments, statistical refinement, positional
// mask), a global temporal attention branch (LSTM + temporal softmax), a
// selective pooling stage per branch, and an MLP head over the concatenated
// branch embeddings.
//
// Checkpoints are a versioned text container: the config block first, then
// one "tensor <name> <ndim> <dims...>" line per parameter followed by its
// values as hex-encoded IEEE-754 bits (lossless and byte-reproducible).

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pavenet/preprocess.hpp"
#include "pavenet/rng.hpp"
#include "pavenet/tensor.hpp"

namespace pavenet {

struct SequenceTooShortError : std::runtime_error { using std::runtime_error::runtime_error; };

struct PavenetConfig {
    int channels = 64;        // feature width C (paper-scale: 512)
    int dpm_k = 3;            // max-pool window for key-point mining
    int dpm_n = 8;            // number of pattern key points
    double mask_on = 0.9;     // positional mask inside segments
    double mask_off = 0.005;  // positional mask outside segments
    int num_subsets = 4;      // channel split factor
    int embed_dim = 32;       // per-branch embedding width
    int pool_heads = 2;       // selective pooling heads
    int head_hidden = 64;     // MLP head hidden width
    int num_writers = 0;      // N_c, classification head output
    int conv_kernel = 3;
    bool use_dpm = true;      // ablation switches
    bool use_gta = true;

    void validate() const {
        if (channels < num_subsets || channels % num_subsets != 0)
            throw ShapeError("channels must be divisible by num_subsets");
        if (dpm_n < 1 || dpm_k < 1) throw ShapeError("dpm_n and dpm_k must be >= 1");
        if (!(0.0 < mask_off && mask_off < mask_on && mask_on <= 1.0))
            throw ShapeError("mask constants must satisfy 0 < off < on <= 1");
        if (conv_kernel % 2 == 0) throw ShapeError("conv_kernel must be odd");
        if (embed_dim < 1 || pool_heads < 1 || head_hidden < 1)
            throw ShapeError("embed_dim, pool_heads, head_hidden must be >= 1");
    }
};

struct CrbParams {               // Conv -> ReLU -> BatchNorm
    Tensor w, b, gamma, beta;
    BnState bn;
    int dilation = 1;
};

struct SeParams {                // squeeze-excitation channel scaling
    Tensor w1, b1, w2, b2;
};

struct TdsParams {               // time-delay scaling block
    std::array<CrbParams, 3> convs;  // hierarchical convs for subsets 2..4
    SeParams se;
};

struct PoolParams {              // selective pooling
    Tensor score_w, score_b;     // heads x C scores over time
    Tensor proj_w, proj_b;       // embed_dim x (heads * C) projection
};

struct PavenetParams {
    PavenetConfig cfg;

    CrbParams proj;                       // 12 -> C
    std::array<CrbParams, 3> split_crb;   // C/4 -> C/4, subsets 1..3
    CrbParams post;                       // C -> C
    std::array<TdsParams, 3> tds;         // dilations 1, 2, 3
    CrbParams mfa;                        // 4C -> C, kernel 1
    PoolParams dpm_pool, gta_pool;
    Tensor lstm_wx, lstm_wh, lstm_b;      // GTA extractor, hidden size C
    Tensor head_w1, head_b1, head_w2, head_b2;

    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    std::vector<std::pair<std::string, BnState*>> bn_states();

    static PavenetParams init(const PavenetConfig& cfg, uint64_t seed);
};

namespace detail {

inline Tensor random_tensor(Shape shape, SplitMix64& g, double stddev) {
    std::vector<double> v(numel_of(shape));
    for (double& x : v) x = g.normal(0.0, stddev);
    Tensor t = Tensor::from(std::move(shape), std::move(v));
    t.impl->requires_grad = true;
    return t;
}

inline Tensor param_full(Shape shape, double value) {
    Tensor t = Tensor::constant(std::move(shape), value);
    t.impl->requires_grad = true;
    return t;
}

inline CrbParams init_crb(int c_in, int c_out, int k, int dilation, SplitMix64& g) {
    CrbParams p;
    p.w = random_tensor({c_out, c_in, k}, g, std::sqrt(2.0 / (c_in * k)));
    p.b = param_full({c_out}, 0.0);
    p.gamma = param_full({c_out}, 1.0);
    p.beta = param_full({c_out}, 0.0);
    p.bn = BnState(c_out);
    p.dilation = dilation;
    return p;
}

inline SeParams init_se(int channels, SplitMix64& g) {
    const int mid = std::max(1, channels / 4);
    SeParams p;
    p.w1 = random_tensor({mid, channels}, g, std::sqrt(2.0 / channels));
    p.b1 = param_full({mid}, 0.0);
    p.w2 = random_tensor({channels, mid}, g, std::sqrt(2.0 / mid));
    p.b2 = param_full({channels}, 0.0);
    return p;
}

inline PoolParams init_pool(int channels, int heads, int embed_dim, SplitMix64& g) {
    PoolParams p;
    p.score_w = random_tensor({heads, channels}, g, std::sqrt(1.0 / channels));
    p.score_b = param_full({heads}, 0.0);
    p.proj_w = random_tensor({embed_dim, heads * channels}, g, std::sqrt(1.0 / (heads * channels)));
    p.proj_b = param_full({embed_dim}, 0.0);
    return p;
}

}  // namespace detail

inline PavenetParams PavenetParams::init(const PavenetConfig& cfg, uint64_t seed) {
    cfg.validate();
    SplitMix64 g(mix_seed(seed, 0x9a7e));
    PavenetParams p;
    p.cfg = cfg;
    const int C = cfg.channels;
    const int sub = C / cfg.num_subsets;
    const int k = cfg.conv_kernel;

    p.proj = detail::init_crb(FeatureSequence::kChannels, C, k, 1, g);
    for (auto& crb : p.split_crb) crb = detail::init_crb(sub, sub, k, 1, g);
    p.post = detail::init_crb(C, C, k, 1, g);
    for (int i = 0; i < 3; ++i) {
        for (auto& crb : p.tds[static_cast<size_t>(i)].convs)
            crb = detail::init_crb(sub, sub, k, i + 1, g);
        p.tds[static_cast<size_t>(i)].se = detail::init_se(C, g);
    }
    p.mfa = detail::init_crb(4 * C, C, 1, 1, g);

    p.dpm_pool = detail::init_pool(C, cfg.pool_heads, cfg.embed_dim, g);
    p.gta_pool = detail::init_pool(C, cfg.pool_heads, cfg.embed_dim, g);

    const double lstm_sd = 1.0 / std::sqrt(static_cast<double>(C));
    p.lstm_wx = detail::random_tensor({4 * C, C}, g, lstm_sd);
    p.lstm_wh = detail::random_tensor({4 * C, C}, g, lstm_sd);
    p.lstm_b = detail::param_full({4 * C}, 0.0);
    // forget-gate bias starts positive so early training does not wash out state
    for (int h = 0; h < C; ++h) p.lstm_b.data()[C + h] = 1.0;

    const int branches = (cfg.use_dpm ? 1 : 0) + (cfg.use_gta ? 1 : 0);
    const int f_dim = cfg.embed_dim * std::max(1, branches);
    p.head_w1 = detail::random_tensor({cfg.head_hidden, f_dim}, g, std::sqrt(2.0 / f_dim));
    p.head_b1 = detail::param_full({cfg.head_hidden}, 0.0);
    const int n_c = std::max(1, cfg.num_writers);
    p.head_w2 = detail::random_tensor({n_c, cfg.head_hidden}, g, std::sqrt(1.0 / cfg.head_hidden));
    p.head_b2 = detail::param_full({n_c}, 0.0);
    return p;
}

inline std::vector<std::pair<std::string, Tensor*>> PavenetParams::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_crb = [&](const std::string& name, CrbParams& c) {
        out.emplace_back(name + ".w", &c.w);
        out.emplace_back(name + ".b", &c.b);
        out.emplace_back(name + ".gamma", &c.gamma);
        out.emplace_back(name + ".beta", &c.beta);
    };
    auto add_pool = [&](const std::string& name, PoolParams& pl) {
        out.emplace_back(name + ".score_w", &pl.score_w);
        out.emplace_back(name + ".score_b", &pl.score_b);
        out.emplace_back(name + ".proj_w", &pl.proj_w);
        out.emplace_back(name + ".proj_b", &pl.proj_b);
    };
    add_crb("backbone.proj", proj);
    for (size_t i = 0; i < 3; ++i) add_crb("backbone.split" + std::to_string(i + 1), split_crb[i]);
    add_crb("backbone.post", post);
    for (size_t i = 0; i < 3; ++i) {
        const std::string base = "backbone.tds" + std::to_string(i + 1);
        for (size_t j = 0; j < 3; ++j)
            add_crb(base + ".conv" + std::to_string(j + 2), tds[i].convs[j]);
        out.emplace_back(base + ".se.w1", &tds[i].se.w1);
        out.emplace_back(base + ".se.b1", &tds[i].se.b1);
        out.emplace_back(base + ".se.w2", &tds[i].se.w2);
        out.emplace_back(base + ".se.b2", &tds[i].se.b2);
    }
    add_crb("backbone.mfa", mfa);
    add_pool("dpm.pool", dpm_pool);
    add_pool("gta.pool", gta_pool);
    out.emplace_back("gta.lstm.wx", &lstm_wx);
    out.emplace_back("gta.lstm.wh", &lstm_wh);
    out.emplace_back("gta.lstm.b", &lstm_b);
    out.emplace_back("head.w1", &head_w1);
    out.emplace_back("head.b1", &head_b1);
    out.emplace_back("head.w2", &head_w2);
    out.emplace_back("head.b2", &head_b2);
    return out;
}

inline std::vector<std::pair<std::string, BnState*>> PavenetParams::bn_states() {
    std::vector<std::pair<std::string, BnState*>> out;
    out.emplace_back("backbone.proj", &proj.bn);
    for (size_t i = 0; i < 3; ++i)
        out.emplace_back("backbone.split" + std::to_string(i + 1), &split_crb[i].bn);
    out.emplace_back("backbone.post", &post.bn);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j)
            out.emplace_back("backbone.tds" + std::to_string(i + 1) + ".conv" + std::to_string(j + 2),
                             &tds[i].convs[j].bn);
    out.emplace_back("backbone.mfa", &mfa.bn);
    return out;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

inline Tensor crb_forward(CrbParams& p, const Tensor& x, bool training) {
    return batchnorm1d(relu(conv1d(x, p.w, p.b, p.dilation)), p.gamma, p.beta, p.bn, training);
}

// Lightweight Res2Net-style block: split into 4 subsets, hierarchical convs
// on subsets 2..4 (no 1x1 convs at the ends), squeeze-excitation channel
// scaling, residual add.
inline Tensor tds_forward(TdsParams& p, const Tensor& x, int num_subsets, bool training) {
    const int C = x.dim(0);
    const int sub = C / num_subsets;
    std::vector<Tensor> ys;
    ys.reserve(static_cast<size_t>(num_subsets));
    ys.push_back(slice_rows(x, 0, sub));  // subset 1 passes through
    Tensor prev;
    for (int i = 1; i < num_subsets; ++i) {
        Tensor xi = slice_rows(x, i * sub, (i + 1) * sub);
        Tensor inp = i == 1 ? xi : add(xi, prev);
        prev = crb_forward(p.convs[static_cast<size_t>(i - 1)], inp, training);
        ys.push_back(prev);
    }
    Tensor merged = concat(ys, 0);
    Tensor z = time_mean(merged);
    Tensor a = sigmoid(linear(p.se.w2, relu(linear(p.se.w1, z, p.se.b1)), p.se.b2));
    return add(x, mul_channels(merged, a));
}

// 12 x L input -> C x L features. Projection CRB, channel-split stage with
// per-subset CRBs, then one CRB plus three time-delay scaling blocks whose
// outputs are densely concatenated and projected back to C channels.
inline Tensor backbone_forward(PavenetParams& p, const Tensor& x, bool training) {
    const int C = p.cfg.channels;
    const int sub = C / p.cfg.num_subsets;

    Tensor h = crb_forward(p.proj, x, training);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(p.cfg.num_subsets));
    for (int i = 0; i < p.cfg.num_subsets; ++i) {
        Tensor xi = slice_rows(h, i * sub, (i + 1) * sub);
        if (i < 3)
            parts.push_back(crb_forward(p.split_crb[static_cast<size_t>(i)], xi, training));
        else
            parts.push_back(xi);
    }
    Tensor y = concat(parts, 0);

    Tensor d0 = crb_forward(p.post, y, training);
    Tensor d1 = tds_forward(p.tds[0], d0, p.cfg.num_subsets, training);
    Tensor d2 = tds_forward(p.tds[1], d1, p.cfg.num_subsets, training);
    Tensor d3 = tds_forward(p.tds[2], d2, p.cfg.num_subsets, training);
    Tensor dense = concat({d0, d1, d2, d3}, 0);
    return crb_forward(p.mfa, dense, training);
}

// Attention-weighted aggregation of a C x L sequence into a fixed-length
// vector: per-head scores over time, temporal softmax, weighted frame sums,
// heads concatenated and linearly projected.
inline Tensor selective_pool(const PoolParams& p, const Tensor& seq) {
    Tensor scores = add_row_bias(matmul(p.score_w, seq), p.score_b);  // heads x L
    Tensor attn = softmax(scores, 1);
    Tensor pooled = matmul_bt(seq, attn);  // C x heads
    return linear(p.proj_w, flatten(pooled), p.proj_b);
}

struct KeyPointSet {
    std::vector<int> points;                      // n source time indices
    std::vector<std::pair<int, int>> segments;    // [u_i, v_i) intervals
    int segment_length = 0;                       // l_s
};

// Selects the top-n pattern key points of a C x L sequence: per-channel
// sliding maxima are mapped back to their source time steps, duplicates
// collapse to the largest value per index, candidates rank by value with
// ties broken toward smaller indices.
inline KeyPointSet dpm_keypoints(const Tensor& s, int k, int n, int l_s) {
    const int L = s.dim(1);
    if (L < k)
        throw SequenceTooShortError("sequence shorter than the pooling window");

    std::map<int, double> best;  // source index -> best window-max value
    {
        NoGradGuard ng;
        MaxPoolResult mp = maxpool1d(s, k);
        const int out_len = mp.values.dim(1);
        for (int c = 0; c < s.dim(0); ++c)
            for (int j = 0; j < out_len; ++j) {
                const int src = mp.indices[static_cast<size_t>(c) * out_len + j];
                const double val = mp.values.at(c, j);
                auto [it, inserted] = best.emplace(src, val);
                if (!inserted && val > it->second) it->second = val;
            }
    }
    if (static_cast<int>(best.size()) < n)
        throw SequenceTooShortError("fewer than n distinct key-point candidates");

    std::vector<std::pair<double, int>> ranked;  // (value, index)
    ranked.reserve(best.size());
    for (const auto& [src, val] : best) ranked.emplace_back(val, src);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    KeyPointSet kp;
    kp.segment_length = l_s;
    for (int i = 0; i < n; ++i) kp.points.push_back(ranked[static_cast<size_t>(i)].second);
    for (int p_i : kp.points) {
        int u = p_i - l_s / 2;
        // shift inward at the edges so every segment keeps exactly l_s steps
        u = std::clamp(u, 0, L - l_s);
        kp.segments.emplace_back(u, u + l_s);
    }
    return kp;
}

struct DpmResult {
    Tensor embedding;
    KeyPointSet keypoints;
    std::vector<double> mask;  // positional mask applied to the refined sequence
    double mu = 0.0;           // segment statistics of the refinement step
    double sigma = 0.0;        // pre-guard standard deviation
};

// Discriminative pattern mining: key-point segments of length
// l_s = floor(floor(L/4) / n) (clamped to >= 1), statistical refinement by
// the segment mean/stddev, the 0.9/0.005 positional mask, a residual add,
// and selective pooling to the style embedding f_s.
inline DpmResult dpm_forward(PavenetParams& p, const Tensor& s) {
    const PavenetConfig& cfg = p.cfg;
    const int L = s.dim(1);
    const int l_s = std::max(1, (L / 4) / cfg.dpm_n);
    KeyPointSet kp = dpm_keypoints(s, cfg.dpm_k, cfg.dpm_n, l_s);

    std::vector<Tensor> segs;
    segs.reserve(kp.segments.size());
    for (const auto& [u, v] : kp.segments) segs.push_back(slice_cols(s, u, v));
    Tensor all_segments = concat(segs, 1);  // C x (n * l_s)

    Tensor mu = mean_all(all_segments);
    Tensor sigma_raw = std_all(all_segments);
    Tensor sigma = scalar_affine(sigma_raw, 1.0, 1e-6);  // epsilon guard
    Tensor refined = div_bcast(sub_bcast(s, mu), sigma);

    std::vector<double> mask(static_cast<size_t>(L), cfg.mask_off);
    for (const auto& [u, v] : kp.segments)
        for (int t = u; t < v; ++t) mask[static_cast<size_t>(t)] = cfg.mask_on;
    refined = add(mul_time_mask(refined, mask), s);

    DpmResult result;
    result.embedding = selective_pool(p.dpm_pool, refined);
    result.keypoints = std::move(kp);
    result.mask = std::move(mask);
    result.mu = mu.value();
    result.sigma = sigma_raw.value();
    return result;
}

struct GtaAttend {
    Tensor reweighted;  // y * attn + y
    Tensor attn;        // temporal softmax of the extractor output
};

// Global temporal attention core: LSTM extractor, softmax along the time
// axis per channel, elementwise reweighting, residual add.
inline GtaAttend gta_attend(PavenetParams& p, const Tensor& y) {
    Tensor extracted = lstm(y, p.lstm_wx, p.lstm_wh, p.lstm_b);
    Tensor attn = softmax(extracted, 1);
    Tensor reweighted = add(mul(y, attn), y);
    return {std::move(reweighted), std::move(attn)};
}

inline Tensor gta_forward(PavenetParams& p, const Tensor& y) {
    return selective_pool(p.gta_pool, gta_attend(p, y).reweighted);
}

// Full embedding: backbone, enabled branches, concatenation.
inline Tensor embed_tensor(PavenetParams& p, const Tensor& x, bool training) {
    Tensor y = backbone_forward(p, x, training);
    std::vector<Tensor> branches;
    if (p.cfg.use_dpm) branches.push_back(dpm_forward(p, y).embedding);
    if (p.cfg.use_gta) branches.push_back(gta_forward(p, y));
    if (branches.empty()) branches.push_back(selective_pool(p.gta_pool, y));
    return branches.size() == 1 ? branches[0] : concat(branches, 0);
}

// Converts the first `valid_len` steps of a feature sequence to the model
// input tensor. Trailing padding beyond valid_len never enters the network,
// which keeps pooling, key-point candidacy and normalization statistics
// identical between a sequence and its zero-padded copy.
inline Tensor features_to_tensor(const FeatureSequence& fs, int valid_len = -1) {
    const int L = valid_len < 0 ? fs.length : valid_len;
    if (L < 1 || L > fs.length) throw ShapeError("features_to_tensor: bad valid length");
    std::vector<double> v(static_cast<size_t>(FeatureSequence::kChannels) * L);
    for (int c = 0; c < FeatureSequence::kChannels; ++c)
        for (int t = 0; t < L; ++t) v[static_cast<size_t>(c) * L + t] = fs.at(c, t);
    return Tensor::from({FeatureSequence::kChannels, L}, std::move(v));
}

// Inference-mode embedding of a preprocessed trace.
inline std::vector<double> embed(PavenetParams& p, const FeatureSequence& fs, int valid_len = -1) {
    NoGradGuard ng;
    return embed_tensor(p, features_to_tensor(fs, valid_len), /*training=*/false).values();
}

// MLP head: hidden ReLU layer, then softmax to writer probabilities.
inline Tensor head_forward(PavenetParams& p, const Tensor& f) {
    return softmax(linear(p.head_w2, relu(linear(p.head_w1, f, p.head_b1)), p.head_b2));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace detail {

inline void write_values_hex(std::ostream& out, const std::vector<double>& v) {
    char buf[20];
    for (size_t i = 0; i < v.size(); ++i) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(double));
        std::memcpy(&bits, &v[i], sizeof(bits));
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
        out << buf << (i + 1 < v.size() ? ' ' : '\n');
    }
    if (v.empty()) out << '\n';
}

inline std::vector<double> read_values_hex(std::istream& in, size_t count) {
    std::vector<double> v(count);
    std::string tok;
    for (size_t i = 0; i < count; ++i) {
        if (!(in >> tok)) throw ParseError("checkpoint: truncated value block");
        uint64_t bits = std::stoull(tok, nullptr, 16);
        std::memcpy(&v[i], &bits, sizeof(bits));
    }
    return v;
}

}  // namespace detail

inline void save_checkpoint(PavenetParams& params, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    const PavenetConfig& c = params.cfg;
    out << "pavenet-checkpoint v1\n";
    out << "config channels " << c.channels << "\n";
    out << "config dpm_k " << c.dpm_k << "\n";
    out << "config dpm_n " << c.dpm_n << "\n";
    out << "config mask_on " << detail::format_double(c.mask_on) << "\n";
    out << "config mask_off " << detail::format_double(c.mask_off) << "\n";
    out << "config num_subsets " << c.num_subsets << "\n";
    out << "config embed_dim " << c.embed_dim << "\n";
    out << "config pool_heads " << c.pool_heads << "\n";
    out << "config head_hidden " << c.head_hidden << "\n";
    out << "config num_writers " << c.num_writers << "\n";
    out << "config conv_kernel " << c.conv_kernel << "\n";
    out << "config use_dpm " << (c.use_dpm ? 1 : 0) << "\n";
    out << "config use_gta " << (c.use_gta ? 1 : 0) << "\n";

    for (auto& [name, t] : params.named_parameters()) {
        out << "tensor " << name << ' ' << t->ndim();
        for (int d = 0; d < t->ndim(); ++d) out << ' ' << t->dim(d);
        out << '\n';
        detail::write_values_hex(out, t->values());
    }
    for (auto& [name, bn] : params.bn_states()) {
        out << "bnstate " << name << ' ' << bn->running_mean.size() << '\n';
        detail::write_values_hex(out, bn->running_mean);
        detail::write_values_hex(out, bn->running_var);
    }
    if (!out) throw IoError("checkpoint write failed: " + path.string());
}

inline PavenetParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "pavenet-checkpoint v1")
        throw ParseError("not a pavenet checkpoint: " + path.string());

    PavenetConfig cfg;
    std::map<std::string, std::string> kv;
    std::streampos tensor_start = in.tellg();
    while (std::getline(in, line)) {
        std::istringstream is(line);
        std::string tag;
        is >> tag;
        if (tag != "config") break;
        std::string key, value;
        is >> key >> value;
        kv[key] = value;
        tensor_start = in.tellg();
    }
    auto geti = [&](const char* k, int dflt) {
        return kv.count(k) ? std::stoi(kv[k]) : dflt;
    };
    auto getd = [&](const char* k, double dflt) {
        return kv.count(k) ? std::stod(kv[k]) : dflt;
    };
    cfg.channels = geti("channels", cfg.channels);
    cfg.dpm_k = geti("dpm_k", cfg.dpm_k);
    cfg.dpm_n = geti("dpm_n", cfg.dpm_n);
    cfg.mask_on = getd("mask_on", cfg.mask_on);
    cfg.mask_off = getd("mask_off", cfg.mask_off);
    cfg.num_subsets = geti("num_subsets", cfg.num_subsets);
    cfg.embed_dim = geti("embed_dim", cfg.embed_dim);
    cfg.pool_heads = geti("pool_heads", cfg.pool_heads);
    cfg.head_hidden = geti("head_hidden", cfg.head_hidden);
    cfg.num_writers = geti("num_writers", cfg.num_writers);
    cfg.conv_kernel = geti("conv_kernel", cfg.conv_kernel);
    cfg.use_dpm = geti("use_dpm", 1) != 0;
    cfg.use_gta = geti("use_gta", 1) != 0;

    PavenetParams params = PavenetParams::init(cfg, /*seed=*/0);
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : params.named_parameters()) by_name[name] = t;
    std::map<std::string, BnState*> bn_by_name;
    for (auto& [name, bn] : params.bn_states()) bn_by_name[name] = bn;

    in.clear();
    in.seekg(tensor_start);
    while (in >> line) {
        if (line == "tensor") {
            std::string name;
            int nd;
            in >> name >> nd;
            Shape shape(static_cast<size_t>(nd));
            for (int i = 0; i < nd; ++i) in >> shape[static_cast<size_t>(i)];
            auto values = detail::read_values_hex(in, numel_of(shape));
            auto it = by_name.find(name);
            if (it == by_name.end()) throw ParseError("checkpoint: unknown tensor " + name);
            if (it->second->shape() != shape)
                throw ShapeError("checkpoint: shape mismatch for " + name);
            it->second->values() = std::move(values);
        } else if (line == "bnstate") {
            std::string name;
            size_t n;
            in >> name >> n;
            auto it = bn_by_name.find(name);
            if (it == bn_by_name.end()) throw ParseError("checkpoint: unknown bn state " + name);
            it->second->running_mean = detail::read_values_hex(in, n);
            it->second->running_var = detail::read_values_hex(in, n);
        } else {
            throw ParseError("checkpoint: unexpected token " + line);
        }
    }
    return params;
}

}  // namespace pavenet
