// pavenet: one binary, four subcommands.
//
//   synth       emit a synthetic writer population (traces + manifests)
//   preprocess  dump the 12-channel feature CSV for one trace
//   train       optimize a model on a manifest, write checkpoint + log
//   eval        score a test manifest with a checkpoint or the DTW baseline
//
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pavenet/config.hpp"
#include "pavenet/model.hpp"
#include "pavenet/preprocess.hpp"
#include "pavenet/synthgen.hpp"
#include "pavenet/trace_io.hpp"
#include "pavenet/training.hpp"
#include "pavenet/verify.hpp"

namespace fs = std::filesystem;

namespace {

fs::path resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("PAVENET_OUT")) return env;
    return "out";
}

std::vector<pavenet::FeatureSequence> load_features(const pavenet::DatasetManifest& manifest) {
    std::vector<pavenet::FeatureSequence> features;
    features.reserve(manifest.entries.size());
    for (const pavenet::ManifestEntry& e : manifest.entries) {
        pavenet::RawTrace t = pavenet::load_trace(manifest.base_dir / e.path);
        t.writer_id = e.writer_id;
        t.session = e.session;
        t.label = e.label;
        features.push_back(pavenet::preprocess_trace(t));
    }
    return features;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
};

pavenet::KeyValueConfig load_optional_config(const std::string& path) {
    if (path.empty()) return {};
    return pavenet::KeyValueConfig::load(path);
}

int run_synth(const CommonArgs& common, int writers, int per_session, double beta, double drift,
              uint64_t seed, int train_writers, bool have_writers, bool have_per_session,
              bool have_beta, bool have_drift, bool have_seed) {
    pavenet::KeyValueConfig kv = load_optional_config(common.config_path);
    kv.reject_unknown({"num_writers", "per_session_count", "beta", "drift", "seed"});
    pavenet::SynthConfig cfg = pavenet::synth_config_from(kv);
    if (have_writers) cfg.num_writers = writers;
    if (have_per_session) cfg.per_session_count = per_session;
    if (have_beta) cfg.beta = beta;
    if (have_drift) cfg.drift = drift;
    if (have_seed) cfg.seed = seed;
    if (cfg.num_writers < 1 || cfg.per_session_count < 1)
        throw CLI::ValidationError("synth", "--writers and --per-session must be >= 1");

    const fs::path out = resolve_out_dir(common.out_dir);
    pavenet::GeneratedDataset ds = pavenet::generate_dataset(cfg);
    pavenet::write_dataset(ds, out, train_writers);

    auto counts = ds.manifest.counts();
    std::cout << "wrote " << ds.traces.size() << " traces for " << cfg.num_writers
              << " writers (seed " << cfg.seed << ") to " << out.string() << "\n";
    for (const std::string& w : pavenet::validate_pairing(ds.manifest))
        std::cout << "warning: " << w << "\n";
    if (train_writers > 0)
        std::cout << "split: writers 0-" << train_writers - 1 << " train, " << train_writers
                  << "-" << cfg.num_writers - 1 << " test\n";
    return 0;
}

int run_preprocess(const std::string& trace_path, const std::string& csv_path) {
    pavenet::RawTrace trace = pavenet::load_trace(trace_path);
    pavenet::FeatureSequence fs = pavenet::preprocess_trace(trace);
    if (csv_path.empty()) {
        pavenet::write_feature_csv(fs, std::cout);
    } else {
        std::ofstream out(csv_path);
        if (!out) throw pavenet::IoError("cannot write " + csv_path);
        pavenet::write_feature_csv(fs, out);
        std::cout << "wrote " << fs.length << " steps x " << pavenet::FeatureSequence::kChannels
                  << " channels to " << csv_path << "\n";
    }
    return 0;
}

int run_train(const CommonArgs& common, const std::string& manifest_path, int epochs, int steps,
              double lr0, double decay, uint64_t seed, int channels,
              bool have_epochs, bool have_steps, bool have_lr, bool have_decay, bool have_seed,
              bool have_channels) {
    pavenet::KeyValueConfig kv = load_optional_config(common.config_path);
    kv.reject_unknown({"epochs", "steps_per_epoch", "lr0", "lr_decay", "triplet_weight",
                       "triplet_margin", "angular_lambda", "angular_tan", "rdel_lo", "rdel_hi",
                       "weight_decay", "clip_norm", "id_loss_batch_mean", "seed", "channels",
                       "dpm_k", "dpm_n", "mask_on", "mask_off", "num_subsets", "embed_dim",
                       "pool_heads", "head_hidden", "conv_kernel", "use_dpm", "use_gta"});
    pavenet::TrainConfig tcfg = pavenet::train_config_from(kv);
    pavenet::PavenetConfig mcfg = pavenet::model_config_from(kv);
    if (have_epochs) tcfg.epochs = epochs;
    if (have_steps) tcfg.steps_per_epoch = steps;
    if (have_lr) tcfg.lr0 = lr0;
    if (have_decay) tcfg.lr_decay = decay;
    if (have_seed) tcfg.seed = seed;
    if (have_channels) mcfg.channels = channels;
    tcfg.validate();

    const fs::path out = resolve_out_dir(common.out_dir);
    fs::create_directories(out);

    pavenet::DatasetManifest manifest = pavenet::load_manifest(manifest_path);
    pavenet::TrainDataset dataset = pavenet::TrainDataset::load(manifest);
    mcfg.num_writers = dataset.num_classes();
    mcfg.validate();
    std::cout << "training on " << dataset.traces.size() << " traces from "
              << dataset.num_classes() << " writers; epochs " << tcfg.epochs << ", lr0 "
              << tcfg.lr0 << ", decay " << tcfg.lr_decay << "\n";

    pavenet::PavenetParams params = pavenet::PavenetParams::init(mcfg, tcfg.seed);
    std::ofstream log(out / "train_log.csv");
    if (!log) throw pavenet::IoError("cannot write train log");
    pavenet::train(params, dataset, tcfg, &log, &std::cout);
    pavenet::save_checkpoint(params, out / "checkpoint.txt");
    std::cout << "checkpoint: " << (out / "checkpoint.txt").string() << "\n";
    return 0;
}

int run_eval(const CommonArgs& common, const std::string& manifest_path,
             const std::string& checkpoint_path, bool baseline_dtw, const std::string& protocol,
             const std::string& forgery, const std::string& session_scope, int random_cap,
             uint64_t seed, int threads) {
    if (checkpoint_path.empty() && !baseline_dtw)
        throw CLI::ValidationError("eval", "need --checkpoint or --baseline dtw");

    pavenet::EvalOptions opts;
    opts.protocol = protocol == "1v1" ? pavenet::Protocol::OneVsOne : pavenet::Protocol::FourVsOne;
    opts.across_session = session_scope != "single";
    opts.baseline_dtw = baseline_dtw;
    opts.random_cap = random_cap;
    opts.seed = seed;
    opts.threads = threads;

    const fs::path out = resolve_out_dir(common.out_dir);
    fs::create_directories(out);

    pavenet::DatasetManifest manifest = pavenet::load_manifest(manifest_path);
    std::vector<pavenet::FeatureSequence> features = load_features(manifest);

    pavenet::PavenetParams params;
    pavenet::PavenetParams* model = nullptr;
    if (!baseline_dtw) {
        params = pavenet::load_checkpoint(checkpoint_path);
        model = &params;
    }
    pavenet::EvalReport report = pavenet::evaluate(model, features, opts);

    const std::string system = baseline_dtw ? "dtw-baseline" : "pavenet";
    {
        std::ofstream f(out / "report.txt");
        pavenet::write_report(report, opts.protocol, opts.across_session, system, f);
    }
    {
        std::ofstream f(out / "scores.csv");
        pavenet::write_scores_csv(report.scores, opts.protocol, f);
    }
    {
        std::ofstream f(out / "roc.csv");
        pavenet::write_roc_csv(report.skilled, report.random, f);
    }

    if (forgery == "skilled" || forgery == "both")
        std::printf("skilled forgery EER_g/EER_l: %.2f/%.2f\n", report.skilled.eer_global,
                    report.skilled.eer_local);
    if (forgery == "random" || forgery == "both")
        std::printf("random forgery EER_g/EER_l:  %.2f/%.2f\n", report.random.eer_global,
                    report.random.eer_local);
    std::cout << "reports in " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"online digit-string verification pipeline"};
    app.require_subcommand(1);

    CommonArgs common;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int writers = 30, per_session = 5, train_writers = 0;
    double beta = 0.35, drift = 0.05;
    uint64_t synth_seed = 7;
    synth->add_option("--out", common.out_dir, "output directory (or $PAVENET_OUT)");
    synth->add_option("--config", common.config_path, "key-value config file");
    auto* o_writers = synth->add_option("--writers", writers, "number of writers")
                          ->check(CLI::PositiveNumber);
    auto* o_per = synth->add_option("--per-session", per_session,
                                    "genuine (and forged) samples per writer per session")
                      ->check(CLI::PositiveNumber);
    auto* o_beta = synth->add_option("--beta", beta, "forgery imitation-error blend");
    auto* o_drift = synth->add_option("--drift", drift, "session-2 style drift");
    auto* o_seed = synth->add_option("--seed", synth_seed, "population seed");
    synth->add_option("--train-writers", train_writers,
                      "also write train/test manifests split at this writer id");

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "dump feature CSV for one trace");
    std::string trace_path, csv_path;
    prep->add_option("--trace", trace_path, "trace file")->required();
    prep->add_option("--csv", csv_path, "output CSV (stdout when omitted)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string train_manifest;
    int epochs = 30, steps = 50, channels = 64;
    double lr0 = 0.001, decay = 0.95;
    uint64_t train_seed = 1;
    train_cmd->add_option("--manifest", train_manifest, "training manifest")->required();
    train_cmd->add_option("--out", common.out_dir, "output directory (or $PAVENET_OUT)");
    train_cmd->add_option("--config", common.config_path, "key-value config file");
    auto* o_epochs = train_cmd->add_option("--epochs", epochs, "training epochs");
    auto* o_steps = train_cmd->add_option("--steps", steps, "steps per epoch");
    auto* o_lr = train_cmd->add_option("--lr", lr0, "initial learning rate");
    auto* o_decay = train_cmd->add_option("--decay", decay, "per-epoch lr decay factor");
    auto* o_tseed = train_cmd->add_option("--seed", train_seed, "training seed");
    auto* o_chan = train_cmd->add_option("--channels", channels, "model channel width");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or the DTW baseline");
    std::string eval_manifest, checkpoint, baseline, protocol = "4v1", forgery = "both",
                session_scope = "across";
    int random_cap = 50, threads = 1;
    uint64_t eval_seed = 0;
    eval_cmd->add_option("--manifest", eval_manifest, "test manifest")->required();
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint");
    eval_cmd->add_option("--baseline", baseline, "score with a baseline instead of a model")
        ->check(CLI::IsMember({"dtw"}));
    eval_cmd->add_option("--protocol", protocol, "template protocol")
        ->check(CLI::IsMember({"4v1", "1v1"}));
    eval_cmd->add_option("--forgery", forgery, "which forgery kinds to print")
        ->check(CLI::IsMember({"skilled", "random", "both"}));
    eval_cmd->add_option("--session", session_scope, "session scope")
        ->check(CLI::IsMember({"across", "single"}));
    eval_cmd->add_option("--random-cap", random_cap, "random-forgery queries per writer");
    eval_cmd->add_option("--seed", eval_seed, "subsampling seed");
    eval_cmd->add_option("--threads", threads, "worker threads for scoring");
    eval_cmd->add_option("--out", common.out_dir, "output directory (or $PAVENET_OUT)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return run_synth(common, writers, per_session, beta, drift, synth_seed, train_writers,
                             static_cast<bool>(*o_writers), static_cast<bool>(*o_per),
                             static_cast<bool>(*o_beta), static_cast<bool>(*o_drift),
                             static_cast<bool>(*o_seed));
        if (prep->parsed()) return run_preprocess(trace_path, csv_path);
        if (train_cmd->parsed())
            return run_train(common, train_manifest, epochs, steps, lr0, decay, train_seed,
                             channels, static_cast<bool>(*o_epochs), static_cast<bool>(*o_steps),
                             static_cast<bool>(*o_lr), static_cast<bool>(*o_decay),
                             static_cast<bool>(*o_tseed), static_cast<bool>(*o_chan));
        if (eval_cmd->parsed())
            return run_eval(common, eval_manifest, checkpoint, baseline == "dtw", protocol,
                            forgery, session_scope, random_cap, eval_seed, threads);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const pavenet::ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const pavenet::InvariantError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const pavenet::MissingFileError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const pavenet::DuplicateEntryError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const pavenet::ContentLengthError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const pavenet::InsufficientWritersError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const pavenet::InsufficientGenuineError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
