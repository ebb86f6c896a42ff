#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "dppvae/cli.hpp"
#include "dppvae/dpp.hpp"
#include "dppvae/errors.hpp"
#include "dppvae/eval.hpp"
#include "dppvae/io.hpp"
#include "dppvae/linalg.hpp"
#include "dppvae/models.hpp"

namespace dppvae::cli {

namespace {

using nlohmann::json;
constexpr const char* kLibraryVersion = "0.1.0";

// ---- run bookkeeping -----------------------------------------------------

struct RunContext {
    json config;
    std::string command;
    std::uint64_t seed = 0;
    std::string run_dir;
    std::vector<std::string> artifacts;
    std::vector<std::pair<std::string, double>> timings;
    json extra = json::object();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    RunContext(json cfg, std::string cmd) : config(std::move(cfg)), command(std::move(cmd)) {
        validate_config(config);
        seed = config.value("seed", 0ULL);
        const std::string out = config.value("out", std::string("runs"));
        run_dir = out + "/" + command + "_s" + std::to_string(seed) + "_" +
                  config_hash_hex(config).substr(0, 8);
    }

    template <typename F>
    auto phase(const std::string& name, F&& fn) {
        const auto start = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            timings.emplace_back(name,
                                 std::chrono::duration<double>(
                                     std::chrono::steady_clock::now() - start).count());
        } else {
            auto result = fn();
            timings.emplace_back(name,
                                 std::chrono::duration<double>(
                                     std::chrono::steady_clock::now() - start).count());
            return result;
        }
    }

    std::string artifact(const std::string& name) {
        artifacts.push_back(name);
        return run_dir + "/" + name;
    }

    void finish() {
        json t = json::object();
        for (const auto& [name, secs] : timings) t[name] = secs;
        t["total"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json manifest = {{"command", command},
                         {"seed", seed},
                         {"config", config},
                         {"config_hash", config_hash_hex(config)},
                         {"library_version", kLibraryVersion},
                         {"artifacts", artifacts},
                         {"timings", t}};
        for (const auto& [key, value] : extra.items()) manifest[key] = value;
        atomic_write_file(run_dir + "/manifest.json", manifest.dump(2) + "\n");
    }
};

// ---- config readers --------------------------------------------------------

ImbalanceSpec imbalance_from(const json& j) {
    ImbalanceSpec spec;
    spec.total = j.at("total").get<std::size_t>();
    const auto ratio = j.at("ratio").get<std::vector<double>>();
    for (std::size_t c = 0; c < ratio.size(); ++c) spec.ratios[static_cast<int>(c)] = ratio[c];
    int minor = 0;
    for (std::size_t c = 1; c < ratio.size(); ++c)
        if (ratio[c] < ratio[minor]) minor = static_cast<int>(c);
    spec.minor_class = j.value("minor_class", minor);
    return spec;
}

int odor_index(const std::string& name) {
    if (name.size() != 1 || name[0] < 'A' || name[0] > 'E')
        throw InvalidConfig("odor must be one of A..E, got " + name);
    return name[0] - 'A';
}

SpikeSimConfig spike_config_from(const json& d, std::uint64_t seed) {
    SpikeSimConfig sim;
    sim.n_neurons = d.value("n_neurons", sim.n_neurons);
    if (d.contains("trial_counts"))
        sim.trial_counts = d.at("trial_counts").get<std::vector<std::size_t>>();
    sim.baseline_rate = d.value("baseline_rate", sim.baseline_rate);
    sim.tuned_rate = d.value("tuned_rate", sim.tuned_rate);
    sim.tuning_fraction = d.value("tuning_fraction", sim.tuning_fraction);
    if (d.contains("replay_injection") && !d.at("replay_injection").is_null()) {
        const json& inj = d.at("replay_injection");
        ReplayInjection r;
        r.source_odor = odor_index(inj.at("source").get<std::string>());
        r.target_odor = odor_index(inj.at("target").get<std::string>());
        r.window = {inj.at("window").at(0).get<double>(), inj.at("window").at(1).get<double>()};
        r.weight = inj.at("weight").get<double>();
        sim.replay_injection = r;
    }
    sim.seed = seed;
    sim.validate();
    return sim;
}

struct PreparedData {
    LabeledDataset train;
    std::optional<LabeledDataset> test;       // balanced holdout
    std::optional<LabeledDataset> reference;  // balanced reference pool
    std::vector<TrialRecord> trials;
    bool is_spikes = false;
};

LabeledDataset filter_classes(const LabeledDataset& ds, const std::vector<int>& classes) {
    std::map<int, int> remap;
    for (std::size_t c = 0; c < classes.size(); ++c) remap[classes[c]] = static_cast<int>(c);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (remap.count(ds.labels[i])) keep.push_back(i);
    LabeledDataset out;
    out.features = Matrix(keep.size(), ds.features.cols);
    out.labels.resize(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::memcpy(&out.features.data[i * out.features.cols],
                    &ds.features.data[keep[i] * ds.features.cols],
                    ds.features.cols * sizeof(double));
        out.labels[i] = remap.at(ds.labels[keep[i]]);
    }
    for (const auto& [orig, idx] : remap) out.class_names[idx] = std::to_string(orig);
    out.provenance = {{"source", "filter_classes"}, {"parent", ds.provenance},
                      {"classes", classes}};
    return out;
}

/// Disjoint balanced draw: removes per_class samples of every class from ds
/// and returns them as a separate dataset.
LabeledDataset take_balanced(LabeledDataset& ds, std::size_t per_class, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> pools;
    for (std::size_t i = 0; i < ds.size(); ++i) pools[ds.labels[i]].push_back(i);
    Rng rng(seed);
    std::vector<bool> taken(ds.size(), false);
    std::vector<std::size_t> chosen;
    for (auto& [cls, pool] : pools) {
        if (pool.size() < per_class)
            throw InsufficientSamples("class " + std::to_string(cls) +
                                      " too small for balanced draw");
        auto picks = rng.sample_without_replacement(pool.size(), per_class);
        std::sort(picks.begin(), picks.end());
        for (std::size_t p : picks) {
            chosen.push_back(pool[p]);
            taken[pool[p]] = true;
        }
    }
    std::sort(chosen.begin(), chosen.end());

    auto gather = [&](const std::vector<std::size_t>& idx) {
        LabeledDataset out;
        out.features = Matrix(idx.size(), ds.features.cols);
        out.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::memcpy(&out.features.data[i * out.features.cols],
                        &ds.features.data[idx[i] * ds.features.cols],
                        ds.features.cols * sizeof(double));
            out.labels[i] = ds.labels[idx[i]];
        }
        out.class_names = ds.class_names;
        return out;
    };

    LabeledDataset test = gather(chosen);
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (!taken[i]) rest.push_back(i);
    LabeledDataset remaining = gather(rest);
    remaining.provenance = ds.provenance;
    test.provenance = {{"source", "balanced_holdout"}, {"per_class", per_class}, {"seed", seed}};
    ds = std::move(remaining);
    return test;
}

PreparedData prepare_data(const json& d, std::uint64_t seed, bool want_test,
                          bool want_reference) {
    PreparedData out;
    const std::string kind = d.at("kind").get<std::string>();
    const std::size_t test_per_class = d.value("test_per_class", 500);
    const std::size_t reference_per_class = d.value("reference_per_class", 500);

    if (kind == "blobs") {
        const std::size_t dim = d.at("dim").get<std::size_t>();
        const auto rows = d.at("centers").get<std::vector<std::vector<double>>>();
        Matrix centers(rows.size(), dim);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != dim) throw InvalidConfig("data.centers row width != dim");
            for (std::size_t j = 0; j < dim; ++j) centers(i, j) = rows[i][j];
        }
        const double noise = d.value("noise_std", 0.5);

        std::vector<std::size_t> counts;
        if (d.contains("imbalance")) {
            const auto realized = imbalanced_counts(imbalance_from(d.at("imbalance")));
            for (std::size_t c = 0; c < rows.size(); ++c)
                counts.push_back(realized.count(static_cast<int>(c))
                                     ? realized.at(static_cast<int>(c))
                                     : 0);
        } else {
            counts = d.at("n_per_class").get<std::vector<std::size_t>>();
        }
        out.train = make_blobs(counts, dim, centers, noise, Rng::mix_seed(seed, "data"));
        if (want_test)
            out.test = make_blobs(std::vector<std::size_t>(rows.size(), test_per_class), dim,
                                  centers, noise, Rng::mix_seed(seed, "data.test"));
        if (want_reference)
            out.reference =
                make_blobs(std::vector<std::size_t>(rows.size(), reference_per_class), dim,
                           centers, noise, Rng::mix_seed(seed, "data.reference"));
        return out;
    }

    if (kind == "mnist") {
        LabeledDataset pool = load_idx(d.at("images").get<std::string>(),
                                       d.at("labels").get<std::string>(),
                                       d.value("binarize", true));
        const auto classes = d.value("classes", std::vector<int>{0, 1});
        pool = filter_classes(pool, classes);
        if (want_test)
            out.test = take_balanced(pool, test_per_class, Rng::mix_seed(seed, "data.test"));
        if (want_reference) {
            LabeledDataset copy = pool;
            out.reference = take_balanced(copy, reference_per_class,
                                          Rng::mix_seed(seed, "data.reference"));
        }
        if (d.contains("imbalance"))
            out.train = subsample_imbalanced(pool, imbalance_from(d.at("imbalance")),
                                             Rng::mix_seed(seed, "data"));
        else
            out.train = std::move(pool);
        return out;
    }

    // spike trials, simulated or imported
    out.is_spikes = true;
    if (kind == "spikes")
        out.trials = simulate_trials(spike_config_from(d, seed));
    else
        out.trials = load_trials_jsonl(d.at("trials_path").get<std::string>());
    Standardizer stats;
    out.train = window_features(out.trials, training_window(), stats);
    return out;
}

VAEModel model_from(const json& m, std::size_t data_dim, std::uint64_t seed) {
    const std::size_t latent = m.value("latent_dim", 20);
    const std::string lik_name = m.value("likelihood", std::string("gaussian"));
    const std::string prior_name = m.value("prior", std::string("standard"));
    const auto enc_hidden = m.value("encoder_hidden", std::vector<std::size_t>{256, 128});
    const auto dec_hidden = m.value("decoder_hidden", std::vector<std::size_t>{128, 256});

    KernelParams kernel = KernelParams::isotropic(1000.0, 1.0, 1.0, latent);
    if (m.contains("kernel")) {
        const json& k = m.at("kernel");
        auto widths = [&](const char* key, double fallback) {
            if (!k.contains(key)) return std::vector<double>(latent, fallback);
            if (k.at(key).is_array()) return k.at(key).get<std::vector<double>>();
            return std::vector<double>(latent, k.at(key).get<double>());
        };
        kernel.alpha = k.value("alpha", 1000.0);
        kernel.rho = widths("rho", 1.0);
        kernel.sigma = widths("sigma", 1.0);
        kernel.validate();
    }
    return make_vae(data_dim, latent, enc_hidden, dec_hidden,
                    lik_name == "bernoulli" ? Likelihood::Bernoulli
                                            : Likelihood::GaussianIdentity,
                    prior_name == "dpp" ? PriorKind::Dpp : PriorKind::StandardNormal, kernel,
                    seed);
}

TrainConfig train_config_from(const json& t, std::uint64_t seed) {
    TrainConfig config;
    config.epochs = t.value("epochs", 10);
    config.batch_size = t.value("batch_size", 100);
    config.learning_rate = t.value("learning_rate", 1e-3);
    config.mc_samples = t.value("mc_samples", 1);
    config.seed = seed;
    return config;
}

Checkpoint load_checkpoint_from(const json& section) {
    if (!section.contains("checkpoint"))
        throw InvalidConfig("missing 'checkpoint' path in command section");
    return load_checkpoint(section.at("checkpoint").get<std::string>());
}

std::string hash_hex_of(const void* data, std::size_t bytes) {
    const std::uint64_t h =
        fnv1a64(std::string_view(static_cast<const char*>(data), bytes));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

// ---- commands --------------------------------------------------------------

std::string cmd_train(const json& config) {
    RunContext run(config, "train");
    const json& d = run.config.at("data");
    PreparedData data =
        run.phase("data", [&] { return prepare_data(d, run.seed, false, false); });

    VAEModel model = model_from(run.config.value("model", json::object()),
                                data.train.features.cols, run.seed);
    const TrainConfig tc =
        train_config_from(run.config.value("train", json::object()), run.seed);
    Checkpoint ckpt = run.phase("train", [&] { return train(model, data.train, tc); });

    run.phase("write", [&] {
        save_checkpoint(ckpt, run.artifact("checkpoint.json"));
        std::ostringstream csv;
        csv << "step,recon,kld,total\n";
        for (std::size_t i = 0; i < ckpt.loss_history.size(); ++i) {
            const StepLoss& s = ckpt.loss_history[i];
            csv << i << "," << format_double(s.recon) << "," << format_double(s.kld) << ","
                << format_double(s.total) << "\n";
        }
        atomic_write_file(run.artifact("loss_history.csv"), csv.str());
        atomic_write_file(run.artifact("dataset_manifest.json"),
                          data.train.provenance.dump(2) + "\n");
        if (data.is_spikes && d.value("export_trials", false))
            save_trials_jsonl(data.trials, run.artifact("trials.jsonl"));
    });
    run.extra["train_seconds"] = ckpt.train_seconds;
    run.extra["steps"] = ckpt.loss_history.size();
    run.finish();
    return run.run_dir;
}

std::string cmd_classify(const json& config) {
    RunContext run(config, "classify");
    const json& section = run.config.value("classify", json::object());
    Checkpoint ckpt = load_checkpoint_from(section);

    const json& d = run.config.at("data");
    const std::string default_mode =
        d.at("kind").get<std::string>() == "spikes" ||
                d.at("kind").get<std::string>() == "trials_file"
            ? "balanced_cv"
            : "holdout";
    const std::string mode = section.value("mode", default_mode);
    const auto l2_grid =
        section.value("l2_grid", std::vector<double>{1e-4, 1e-3, 1e-2, 1e-1});
    const std::size_t cv_folds = section.value("cv_folds", 6);
    const std::size_t per_class_test = section.value("per_class_test", 4);

    PreparedData data =
        run.phase("data", [&] { return prepare_data(d, run.seed, mode == "holdout", false); });

    MetricsReport report;
    if (mode == "balanced_cv") {
        const Matrix features = run.phase(
            "latent", [&] { return latent_features(ckpt.model, data.train.features); });
        const BalancedCv cv =
            balanced_cv(data.train.labels, cv_folds, per_class_test, run.seed);
        std::vector<MetricsReport> fold_reports;
        run.phase("cv", [&] {
            for (const auto& [train_idx, test_idx] : cv.folds) {
                Matrix ftr(train_idx.size(), features.cols), fte(test_idx.size(), features.cols);
                std::vector<int> ytr, yte;
                for (std::size_t i = 0; i < train_idx.size(); ++i) {
                    for (std::size_t j = 0; j < features.cols; ++j)
                        ftr(i, j) = features(train_idx[i], j);
                    ytr.push_back(data.train.labels[train_idx[i]]);
                }
                for (std::size_t i = 0; i < test_idx.size(); ++i) {
                    for (std::size_t j = 0; j < features.cols; ++j)
                        fte(i, j) = features(test_idx[i], j);
                    yte.push_back(data.train.labels[test_idx[i]]);
                }
                const LogitModel logit = fit_logit(ftr, ytr, l2_grid, 3, run.seed);
                fold_reports.push_back(evaluate(logit, fte, yte));
            }
        });
        report = average_reports(fold_reports);
        run.extra["cv"] = {{"folds", cv.folds.size()},
                           {"per_class_test", cv.per_class_test},
                           {"reduced", cv.reduced}};
    } else {
        if (!data.test) throw InvalidConfig("holdout mode needs a balanced test split");
        const Matrix train_lat = run.phase(
            "latent", [&] { return latent_features(ckpt.model, data.train.features); });
        const Matrix test_lat = latent_features(ckpt.model, data.test->features);
        const LogitModel logit = run.phase("fit", [&] {
            return fit_logit(train_lat, data.train.labels, l2_grid, cv_folds, run.seed);
        });
        report = evaluate(logit, test_lat, data.test->labels);
        run.extra["logit_l2"] = logit.l2_penalty;
        run.extra["logit_converged"] = logit.converged;
    }
    report.class_names = data.train.class_names;

    run.phase("write", [&] {
        atomic_write_file(run.artifact("metrics.csv"), metrics_to_csv(report));
        atomic_write_file(run.artifact("metrics.json"), metrics_to_json(report).dump(2) + "\n");
    });
    run.extra["checkpoint_train_seconds"] = ckpt.train_seconds;
    run.finish();
    return run.run_dir;
}

std::string cmd_generate(const json& config) {
    RunContext run(config, "generate");
    const json& section = run.config.value("generate", json::object());
    Checkpoint ckpt = load_checkpoint_from(section);
    const std::size_t n_samples = section.value("n_samples", 5000);
    const double reference_l2 = section.value("reference_l2", 1e-2);

    PreparedData data = run.phase(
        "data", [&] { return prepare_data(run.config.at("data"), run.seed, false, true); });
    if (!data.reference) throw InvalidConfig("generate needs a reference dataset");

    const LogitModel reference = run.phase("reference", [&] {
        return fit_logit(data.reference->features, data.reference->labels, {reference_l2}, 1,
                         run.seed);
    });

    // explicit latent draws so the manifest can prove two runs shared them
    Matrix z(n_samples, ckpt.model.latent_dim);
    Rng rng = Rng::substream(run.seed, "generation");
    for (double& v : z.data) v = rng.normal();
    const Matrix samples =
        run.phase("decode", [&] { return decode_latents(ckpt.model, z); });
    const BalanceAudit audit = audit_balance(samples, reference);

    run.phase("write", [&] {
        // binary tensor: magic, version, rank, dims, little-endian doubles
        std::string blob;
        blob.append("DPPT", 4);
        auto put_u32 = [&](std::uint32_t v) { blob.append(reinterpret_cast<char*>(&v), 4); };
        auto put_u64 = [&](std::uint64_t v) { blob.append(reinterpret_cast<char*>(&v), 8); };
        put_u32(1);
        put_u32(2);
        put_u64(samples.rows);
        put_u64(samples.cols);
        blob.append(reinterpret_cast<const char*>(samples.data.data()),
                    samples.data.size() * sizeof(double));
        atomic_write_file(run.artifact("samples.bin"), blob);

        json per_class = json::object();
        for (std::size_t c = 0; c < audit.counts.size(); ++c) {
            const auto it = data.reference->class_names.find(static_cast<int>(c));
            const std::string name =
                it != data.reference->class_names.end() ? it->second : std::to_string(c);
            per_class[name] = {{"count", audit.counts[c]},
                               {"percent", audit.percent[c]},
                               {"ci95", {audit.ci_lo[c], audit.ci_hi[c]}}};
        }
        atomic_write_file(run.artifact("audit.json"),
                          json{{"n_samples", audit.n_samples}, {"per_class", per_class}}.dump(2) +
                              "\n");
    });
    run.extra["latent_draws_hash"] = hash_hex_of(z.data.data(), z.data.size() * sizeof(double));
    run.extra["checkpoint_train_seconds"] = ckpt.train_seconds;
    run.finish();
    return run.run_dir;
}

std::string cmd_replay(const json& config) {
    RunContext run(config, "replay");
    const json& section = run.config.value("replay", json::object());
    Checkpoint ckpt = load_checkpoint_from(section);

    PreparedData data = run.phase(
        "data", [&] { return prepare_data(run.config.at("data"), run.seed, false, false); });
    if (!data.is_spikes) throw InvalidConfig("replay needs spike-trial data");

    std::vector<Window> windows;
    if (!section.contains("windows") || section.at("windows").is_string())
        windows = replay_window_grid();
    else
        for (const auto& w : section.at("windows"))
            windows.push_back({w.at(0).get<double>(), w.at(1).get<double>()});

    const std::size_t grid_size = section.value("grid_size", 200);
    const double logit_l2 = section.value("logit_l2", 1e-2);
    const std::vector<ReplayFrame> frames = run.phase("replay", [&] {
        return replay_export(ckpt.model, data.trials, training_window(), windows, grid_size,
                             logit_l2, run.seed);
    });

    run.phase("write", [&] {
        save_frames_jsonl(frames, run.artifact("frames.jsonl"));
        std::ostringstream occ;
        occ << "window_start,window_end,class";
        const std::size_t k = frames.empty() ? 0 : frames[0].class_occupancy.begin()->second.size();
        for (std::size_t c = 0; c < k; ++c) occ << ",region_" << odor_name(static_cast<int>(c));
        occ << "\n";
        for (const auto& frame : frames)
            for (const auto& [cls, frac] : frame.class_occupancy) {
                occ << format_double(frame.window.start) << ","
                    << format_double(frame.window.end) << "," << odor_name(cls);
                for (double v : frac) occ << "," << format_double(v);
                occ << "\n";
            }
        atomic_write_file(run.artifact("occupancy.csv"), occ.str());
        if (section.value("svg", false)) {
            for (std::size_t f = 0; f < frames.size(); ++f) {
                char name[32];
                std::snprintf(name, sizeof name, "frame_%02zu.svg", f);
                atomic_write_file(run.artifact(name), frame_to_svg(frames[f]));
            }
        }
    });
    run.extra["checkpoint_train_seconds"] = ckpt.train_seconds;
    run.finish();
    return run.run_dir;
}

// ---- selftest ---------------------------------------------------------------

namespace {

struct CheckReporter {
    std::ostream& out;
    int failures = 0;

    void check(const std::string& name, double observed, double tolerance) {
        const bool ok = observed < tolerance;
        if (!ok) ++failures;
        out << (ok ? "ok   " : "FAIL ") << name << "  observed=" << observed
            << " tol=" << tolerance << "\n";
    }
};

double selftest_brute_esp(const std::vector<double>& lams, std::size_t k) {
    if (k == 0) return 1.0;
    if (k > lams.size()) return 0.0;
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    double total = 0.0;
    const std::size_t m = lams.size();
    for (;;) {
        double prod = 1.0;
        for (std::size_t i : idx) prod *= lams[i];
        total += prod;
        std::size_t i = k;
        bool done = true;
        while (i-- > 0) {
            if (idx[i] != i + m - k) {
                ++idx[i];
                for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
                done = false;
                break;
            }
        }
        if (done) return total;
    }
}

}  // namespace

int cmd_selftest(bool perturb_esp, std::ostream& out) {
    CheckReporter report{out};

    {  // elementary symmetric polynomials vs exhaustive subsets
        Rng rng(101);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t m = 1 + rng.index(12);
            std::vector<double> lams(m), logl(m);
            for (std::size_t i = 0; i < m; ++i) {
                lams[i] = std::exp(rng.uniform(std::log(1e-6), std::log(1e3)));
                logl[i] = std::log(lams[i] * (perturb_esp ? 1.0 + 1e-6 : 1.0));
            }
            const ESPTable table = esp(logl, m);
            for (std::size_t k = 0; k <= m; ++k) {
                const double brute = selftest_brute_esp(lams, k);
                worst = std::max(worst,
                                 std::fabs(std::exp(table.log_values[k]) - brute) / brute);
            }
        }
        report.check("esp-vs-exhaustive-subsets", worst, 1e-10);
    }

    {  // gradient checks
        Rng rng(103);
        Matrix p(3, 3);
        for (double& v : p.data) v = rng.uniform(-1.0, 1.0);
        report.check("grad-elementwise-exp",
                     grad_check([](Tape&, Node x) { return sum(exp(x)); }, p, 1e-5), 1e-6);
        Matrix q(3, 3);
        for (double& v : q.data) v = rng.uniform(0.5, 2.0);
        report.check("grad-elementwise-log",
                     grad_check([](Tape&, Node x) { return sum(log(x)); }, q, 1e-5), 1e-6);
        Matrix g(4, 4);
        for (double& v : g.data) v = rng.normal();
        Matrix spd = add(matmul(transpose(g), g), Matrix::identity(4));
        report.check("grad-logdet",
                     grad_check([](Tape&, Node x) { return logdet_spd(x); }, spd, 1e-5), 1e-5);

        const auto kernel = KernelParams::isotropic(2.0, 1.0, 1.0, 3);
        auto model = make_vae(5, 3, {4}, {4}, Likelihood::GaussianIdentity, PriorKind::Dpp,
                              kernel, 103);
        Matrix x(6, 5), eps(6, 3);
        for (double& v : x.data) v = rng.normal();
        for (double& v : eps.data) v = rng.normal();
        auto loss = [&](Tape& t, Node w0) {
            VaeNodes nodes = VaeNodes::insert(t, model, false);
            nodes.enc_w[0] = w0;
            EncoderNodes enc = encode_nodes(model, nodes, t.constant(x));
            Node z = reparameterize_nodes(t, enc, eps);
            Node dec = decode_nodes(model, nodes, z);
            return add(reconstruction_loss(t, x, dec, model.likelihood),
                       dpp_kld(t, enc, z, model.kernel, 0.8));
        };
        report.check("grad-dppvae-loss", grad_check(loss, model.encoder.weights[0], 1e-5), 1e-4);
    }

    {  // analytic spectrum vs quadrature discretization of the operator
        for (auto [alpha, rho, sigma] : {std::tuple{1.0, 1.0, 1.0}, std::tuple{1000.0, 1.0, 1.0},
                                         std::tuple{1.0, 2.0, 0.5}}) {
            const auto params = KernelParams::isotropic(alpha, rho, sigma, 1);
            const Spectrum sp = continuous_spectrum(params, 10);
            const std::size_t nodes = 400;
            const double half = 10.0 * sigma;
            std::vector<double> xs(nodes), ws(nodes);
            const double h = 2.0 * half / static_cast<double>(nodes - 1);
            for (std::size_t i = 0; i < nodes; ++i) {
                xs[i] = -half + h * static_cast<double>(i);
                ws[i] = (i == 0 || i + 1 == nodes) ? h / 2.0 : h;
            }
            Matrix k(nodes, nodes);
            for (std::size_t i = 0; i < nodes; ++i)
                for (std::size_t j = 0; j < nodes; ++j) {
                    std::vector<double> xi = {xs[i]}, xj = {xs[j]};
                    k(i, j) = std::sqrt(ws[i]) * quality(xi, params) *
                              similarity(xi, xj, params) * quality(xj, params) *
                              std::sqrt(ws[j]);
                }
            const EigenDecomposition eig = eigh(k);
            double worst = 0.0;
            for (std::size_t i = 0; i < 10; ++i)
                worst = std::max(worst,
                                 std::fabs(sp.eigenvalues[i] - eig.values[i]) / eig.values[i]);
            std::ostringstream name;
            name << "spectrum-vs-quadrature(alpha=" << alpha << ",rho=" << rho
                 << ",sigma=" << sigma << ")";
            report.check(name.str(), worst, 1e-2);
        }
    }

    {  // normalizer bound sandwich
        const auto params = KernelParams::isotropic(1.0, 1.0, 1.0, 1);
        // excess of a over b, zero when a <= b (tolerates -inf lower bounds
        // from truncations shorter than k)
        auto excess = [](double a, double b) { return a > b ? a - b : 0.0; };
        for (std::size_t k : {3u, 10u}) {
            const double reference =
                normalizer_bounds(continuous_spectrum(params, 400), k).log_lower;
            double prev_lo = -std::numeric_limits<double>::infinity();
            double prev_hi = std::numeric_limits<double>::infinity();
            double violation = 0.0;
            for (std::size_t m : {5u, 10u, 20u, 40u, 80u}) {
                const NormalizerBound b = normalizer_bounds(continuous_spectrum(params, m), k);
                violation = std::max(violation, excess(b.log_lower, reference));
                violation = std::max(violation, excess(reference, b.log_upper));
                violation = std::max(violation, excess(prev_lo, b.log_lower));
                violation = std::max(violation, excess(b.log_upper, prev_hi));
                prev_lo = b.log_lower;
                prev_hi = b.log_upper;
            }
            report.check("normalizer-sandwich(k=" + std::to_string(k) + ")", violation, 1e-9);
        }
    }

    out << (report.failures == 0 ? "selftest passed" : "selftest FAILED") << " ("
        << report.failures << " failures)\n";
    return report.failures;
}

// ---- argv entry -------------------------------------------------------------

int run_cli(int argc, char** argv) {
    CLI::App app{"Diversity-prior VAE experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::int64_t> seed_flag;
    std::vector<std::string> overrides;
    bool perturb_esp = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", seed_flag, "override the config seed");
        sub->add_option("--out", out_dir, "override the output directory");
        sub->add_option("--override", overrides,
                        "section.key=value config override (repeatable)");
    };
    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    CLI::App* classify_cmd =
        app.add_subcommand("classify", "latent-feature classification metrics");
    CLI::App* generate_cmd =
        app.add_subcommand("generate", "decode latent draws and audit class balance");
    CLI::App* replay_cmd =
        app.add_subcommand("replay", "export per-window latent projections");
    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the numeric oracle suite");
    for (CLI::App* sub : {train_cmd, classify_cmd, generate_cmd, replay_cmd}) add_common(sub);
    selftest_cmd->add_flag("--perturb-esp", perturb_esp)->group("");  // test hook

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (selftest_cmd->parsed()) return cmd_selftest(perturb_esp, std::cout) == 0 ? 0 : 1;

        json config = load_config_file(config_path);
        for (const std::string& kv : overrides) apply_override(config, kv);
        if (seed_flag) config["seed"] = *seed_flag;
        if (!out_dir.empty()) config["out"] = out_dir;
        validate_config(config);

        std::string run_dir;
        if (train_cmd->parsed()) run_dir = cmd_train(config);
        else if (classify_cmd->parsed()) run_dir = cmd_classify(config);
        else if (generate_cmd->parsed()) run_dir = cmd_generate(config);
        else if (replay_cmd->parsed()) run_dir = cmd_replay(config);
        if (!overrides.empty()) {
            // fold the raw override strings into the written manifest
            const std::string manifest_path = run_dir + "/manifest.json";
            json manifest = json::parse(read_file(manifest_path));
            manifest["overrides"] = overrides;
            atomic_write_file(manifest_path, manifest.dump(2) + "\n");
        }
        std::cout << run_dir << "\n";
        return 0;
    } catch (const InvalidConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidParams& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TruncatedFile& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const BadMagic& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DimensionMismatch& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const InsufficientSamples& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const TooFewSamples& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const UnknownWindow& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dppvae::cli
