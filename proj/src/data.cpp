#include "dppvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dppvae/errors.hpp"
#include "dppvae/io.hpp"

namespace dppvae {

namespace {
constexpr double kWindowTol = 1e-9;

std::uint32_t read_be32(const std::string& bytes, std::size_t at, const std::string& path) {
    if (at + 4 > bytes.size()) throw TruncatedFile(path + ": header past end of file");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + at);
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}
}  // namespace

std::map<int, std::size_t> LabeledDataset::class_counts() const {
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    return counts;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        bool binarize) {
    const std::string img = read_file(images_path);
    const std::string lab = read_file(labels_path);

    if (read_be32(img, 0, images_path) != 0x00000803u)
        throw BadMagic(images_path + ": expected image magic 0x00000803");
    if (read_be32(lab, 0, labels_path) != 0x00000801u)
        throw BadMagic(labels_path + ": expected label magic 0x00000801");

    const std::size_t n = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n != n_labels)
        throw DimensionMismatch("image count " + std::to_string(n) + " vs label count " +
                                std::to_string(n_labels));
    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + n * pixels) throw TruncatedFile(images_path + ": pixel data short");
    if (lab.size() < 8 + n) throw TruncatedFile(labels_path + ": label data short");

    LabeledDataset ds;
    ds.features = Matrix(n, pixels);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* px = reinterpret_cast<const unsigned char*>(img.data() + 16 + i * pixels);
        for (std::size_t j = 0; j < pixels; ++j) {
            const double v = static_cast<double>(px[j]) / 255.0;
            ds.features(i, j) = binarize ? (v > 0.5 ? 1.0 : 0.0) : v;
        }
        ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
    }
    for (int l : ds.labels)
        if (!ds.class_names.count(l)) ds.class_names[l] = std::to_string(l);
    ds.provenance = {{"source", "idx"},
                     {"images", images_path},
                     {"labels", labels_path},
                     {"binarize", binarize},
                     {"count", n}};
    return ds;
}

std::map<int, std::size_t> imbalanced_counts(const ImbalanceSpec& spec) {
    if (spec.total == 0) throw InvalidConfig("subsample: total must be positive");
    if (spec.ratios.size() < 2) throw InvalidConfig("subsample: need at least two class weights");
    double weight_sum = 0.0;
    for (const auto& [cls, w] : spec.ratios) {
        (void)cls;
        if (!(w > 0.0)) throw InvalidConfig("subsample: weights must be positive");
        weight_sum += w;
    }

    std::map<int, std::size_t> realized;
    if (spec.ratios.size() == 2) {
        int major = -1, minor = spec.minor_class;
        for (const auto& [cls, w] : spec.ratios)
            if (cls != minor) major = cls;
        if (major < 0) throw InvalidConfig("subsample: minor_class not among ratio keys");
        const double w_major = spec.ratios.at(major);
        auto major_count =
            static_cast<std::size_t>(std::llround(spec.total * w_major / weight_sum));
        std::size_t minor_count =
            std::max<std::size_t>(1, spec.total > major_count ? spec.total - major_count : 0);
        major_count = spec.total - minor_count;
        realized[major] = major_count;
        realized[minor] = minor_count;
    } else {
        // proportional rounding, floor 1, largest class absorbs the residue
        long residue = static_cast<long>(spec.total);
        int largest = spec.ratios.begin()->first;
        for (const auto& [cls, w] : spec.ratios) {
            const auto c = static_cast<std::size_t>(
                std::max<long>(1, std::llround(spec.total * w / weight_sum)));
            realized[cls] = c;
            residue -= static_cast<long>(c);
            if (w > spec.ratios.at(largest)) largest = cls;
        }
        if (residue != 0) {
            const long adjusted = static_cast<long>(realized[largest]) + residue;
            if (adjusted < 1) throw InvalidConfig("subsample: ratios incompatible with total");
            realized[largest] = static_cast<std::size_t>(adjusted);
        }
    }
    return realized;
}

LabeledDataset subsample_imbalanced(const LabeledDataset& ds, const ImbalanceSpec& spec,
                                    std::uint64_t seed) {
    const std::map<int, std::size_t> realized = imbalanced_counts(spec);

    std::map<int, std::vector<std::size_t>> pools;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) pools[ds.labels[i]].push_back(i);

    Rng rng = Rng::substream(seed, "subsample");
    std::vector<std::size_t> chosen;
    for (const auto& [cls, count] : realized) {
        auto pool_it = pools.find(cls);
        if (pool_it == pools.end() || pool_it->second.size() < count)
            throw InsufficientSamples("class " + std::to_string(cls) + " has " +
                                      std::to_string(pool_it == pools.end()
                                                         ? 0
                                                         : pool_it->second.size()) +
                                      " samples, need " + std::to_string(count));
        auto picks = rng.sample_without_replacement(pool_it->second.size(), count);
        std::sort(picks.begin(), picks.end());
        for (std::size_t p : picks) chosen.push_back(pool_it->second[p]);
    }

    LabeledDataset out;
    out.features = Matrix(chosen.size(), ds.features.cols);
    out.labels.resize(chosen.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        std::memcpy(&out.features.data[i * out.features.cols],
                    &ds.features.data[chosen[i] * ds.features.cols],
                    ds.features.cols * sizeof(double));
        out.labels[i] = ds.labels[chosen[i]];
    }
    out.class_names = ds.class_names;

    nlohmann::json counts_json, pct_json;
    for (const auto& [cls, count] : realized) {
        counts_json[std::to_string(cls)] = count;
        pct_json[std::to_string(cls)] = 100.0 * static_cast<double>(count) /
                                        static_cast<double>(chosen.size());
    }
    out.provenance = {{"source", "subsample_imbalanced"},
                      {"parent", ds.provenance},
                      {"seed", seed},
                      {"total", spec.total},
                      {"minor_class", spec.minor_class},
                      {"realized_counts", counts_json},
                      {"realized_percent", pct_json}};
    return out;
}

LabeledDataset make_blobs(const std::vector<std::size_t>& n_per_class, std::size_t dim,
                          const Matrix& centers, double noise_std, std::uint64_t seed) {
    if (centers.rows != n_per_class.size() || centers.cols != dim)
        throw ShapeMismatch("make_blobs: centers must be n_classes x dim");
    if (noise_std < 0.0) throw InvalidConfig("make_blobs: negative noise");
    for (std::size_t a = 0; a < centers.rows; ++a)
        for (std::size_t b = a + 1; b < centers.rows; ++b)
            if (max_abs_diff(centers.row(a), centers.row(b)) == 0.0)
                throw InvalidConfig("make_blobs: duplicate centers");

    std::size_t total = 0;
    for (std::size_t n : n_per_class) total += n;
    Rng rng = Rng::substream(seed, "blobs");

    LabeledDataset ds;
    ds.features = Matrix(total, dim);
    ds.labels.reserve(total);
    std::size_t at = 0;
    for (std::size_t cls = 0; cls < n_per_class.size(); ++cls) {
        for (std::size_t i = 0; i < n_per_class[cls]; ++i, ++at) {
            for (std::size_t j = 0; j < dim; ++j)
                ds.features(at, j) = centers(cls, j) + noise_std * rng.normal();
            ds.labels.push_back(static_cast<int>(cls));
        }
        ds.class_names[static_cast<int>(cls)] = std::to_string(cls);
    }
    ds.provenance = {{"source", "blobs"},
                     {"seed", seed},
                     {"dim", dim},
                     {"noise_std", noise_std},
                     {"n_per_class", n_per_class}};
    return ds;
}

// ---- spike simulator -----------------------------------------------------

bool Window::matches(const Window& o) const {
    return std::fabs(start - o.start) < kWindowTol && std::fabs(end - o.end) < kWindowTol;
}

const std::vector<long>& TrialRecord::counts_for(const Window& w) const {
    for (const auto& wc : windows)
        if (wc.window.matches(w)) return wc.counts;
    throw UnknownWindow("trial " + std::to_string(trial_id) + " has no window [" +
                        std::to_string(w.start) + ", " + std::to_string(w.end) + "]");
}

void SpikeSimConfig::validate() const {
    if (n_neurons == 0) throw InvalidConfig("spike sim: need at least one neuron");
    if (trial_counts.size() != 5) throw InvalidConfig("spike sim: expected five odor counts");
    if (baseline_rate < 0.0 || tuned_rate < 0.0) throw InvalidConfig("spike sim: negative rate");
    if (tuning_fraction < 0.0 || tuning_fraction > 1.0)
        throw InvalidConfig("spike sim: tuning_fraction outside [0,1]");
    if (replay_injection) {
        const auto& inj = *replay_injection;
        if (inj.source_odor < 0 || inj.source_odor > 4 || inj.target_odor < 0 ||
            inj.target_odor > 4)
            throw InvalidConfig("spike sim: odor out of range");
        if (inj.weight < 0.0 || inj.weight > 1.0)
            throw InvalidConfig("spike sim: blend weight outside [0,1]");
        if (!(inj.window.width() > 0.0)) throw InvalidConfig("spike sim: empty injection window");
    }
}

std::string odor_name(int odor) {
    static const char* names[] = {"A", "B", "C", "D", "E"};
    if (odor < 0 || odor > 4) throw InvalidConfig("odor index out of range");
    return names[odor];
}

Window training_window() { return {0.15, 0.4}; }

std::vector<Window> replay_window_grid() {
    std::vector<Window> grid;
    for (int i = 0; i < 16; ++i)
        grid.push_back({-2.0 + 0.25 * i, -2.0 + 0.25 * (i + 1)});
    grid.push_back({1.9, 2.15});
    return grid;
}

std::vector<Window> analysis_windows() {
    std::vector<Window> all = replay_window_grid();
    all.push_back(training_window());
    return all;
}

std::vector<std::vector<std::size_t>> tuned_neurons(const SpikeSimConfig& config) {
    config.validate();
    Rng rng = Rng::substream(config.seed, "spikes.tuning");
    const auto k = static_cast<std::size_t>(
        std::llround(config.tuning_fraction * static_cast<double>(config.n_neurons)));
    std::vector<std::vector<std::size_t>> tuned(5);
    for (int odor = 0; odor < 5; ++odor) {
        tuned[odor] = rng.sample_without_replacement(config.n_neurons, k);
        std::sort(tuned[odor].begin(), tuned[odor].end());
    }
    return tuned;
}

std::vector<TrialRecord> simulate_trials(const SpikeSimConfig& config) {
    config.validate();
    const auto tuned = tuned_neurons(config);
    const std::vector<Window> windows = analysis_windows();
    Rng rng = Rng::substream(config.seed, "spikes.counts");

    // training-window rate template per odor
    auto template_rate = [&](int odor, std::size_t neuron) {
        const bool is_tuned =
            std::binary_search(tuned[odor].begin(), tuned[odor].end(), neuron);
        return is_tuned ? config.tuned_rate : config.baseline_rate;
    };
    const Window train_w = training_window();

    std::vector<TrialRecord> trials;
    int trial_id = 0;
    for (int odor = 0; odor < 5; ++odor) {
        for (std::size_t t = 0; t < config.trial_counts[odor]; ++t) {
            TrialRecord trial;
            trial.trial_id = trial_id++;
            trial.odor = odor;
            for (const Window& w : windows) {
                WindowCounts wc;
                wc.window = w;
                wc.counts.resize(config.n_neurons);
                const bool is_training = w.matches(train_w);
                const bool injected = config.replay_injection &&
                                      odor == config.replay_injection->source_odor &&
                                      w.midpoint() >= config.replay_injection->window.start &&
                                      w.midpoint() <= config.replay_injection->window.end;
                for (std::size_t n = 0; n < config.n_neurons; ++n) {
                    double rate = is_training ? template_rate(odor, n) : config.baseline_rate;
                    if (injected) {
                        const double target =
                            template_rate(config.replay_injection->target_odor, n);
                        rate = (1.0 - config.replay_injection->weight) * rate +
                               config.replay_injection->weight * target;
                    }
                    wc.counts[n] = rng.poisson(rate * w.width());
                }
                trial.windows.push_back(std::move(wc));
            }
            trials.push_back(std::move(trial));
        }
    }
    return trials;
}

LabeledDataset window_features(const std::vector<TrialRecord>& trials, const Window& window,
                               Standardizer& standardizer) {
    if (trials.empty()) throw InvalidConfig("window_features: no trials");
    const std::size_t n = trials.size();
    const std::size_t d = trials[0].counts_for(window).size();

    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& counts = trials[i].counts_for(window);
        if (counts.size() != d) throw DimensionMismatch("inconsistent neuron counts");
        for (std::size_t j = 0; j < d; ++j) x(i, j) = static_cast<double>(counts[j]);
    }

    if (!standardizer.fitted) {
        standardizer.means.assign(d, 0.0);
        standardizer.stds.assign(d, 1.0);
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += x(i, j);
            standardizer.means[j] = s / static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double c = x(i, j) - standardizer.means[j];
                var += c * c;
            }
            var /= static_cast<double>(n);
            standardizer.stds[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
        standardizer.fitted = true;
    }
    if (standardizer.means.size() != d)
        throw DimensionMismatch("standardizer fitted with a different neuron count");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            x(i, j) = (x(i, j) - standardizer.means[j]) / standardizer.stds[j];

    LabeledDataset ds;
    ds.features = std::move(x);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = trials[i].odor;
    for (int odor = 0; odor < 5; ++odor) ds.class_names[odor] = odor_name(odor);
    ds.provenance = {{"source", "window_features"},
                     {"window", {window.start, window.end}},
                     {"n_trials", n},
                     {"n_neurons", d}};
    return ds;
}

nlohmann::json trial_to_json(const TrialRecord& trial) {
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& wc : trial.windows)
        windows.push_back({{"start", wc.window.start},
                           {"end", wc.window.end},
                           {"counts", wc.counts}});
    return {{"schema_version", 1},
            {"trial_id", trial.trial_id},
            {"odor", odor_name(trial.odor)},
            {"windows", windows}};
}

TrialRecord trial_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != 1)
        throw InvalidConfig("unsupported trial schema version");
    TrialRecord trial;
    trial.trial_id = j.at("trial_id").get<int>();
    const std::string odor = j.at("odor").get<std::string>();
    if (odor.size() != 1 || odor[0] < 'A' || odor[0] > 'E')
        throw InvalidConfig("bad odor label: " + odor);
    trial.odor = odor[0] - 'A';
    for (const auto& w : j.at("windows")) {
        WindowCounts wc;
        wc.window = {w.at("start").get<double>(), w.at("end").get<double>()};
        wc.counts = w.at("counts").get<std::vector<long>>();
        trial.windows.push_back(std::move(wc));
    }
    return trial;
}

void save_trials_jsonl(const std::vector<TrialRecord>& trials, const std::string& path) {
    std::ostringstream out;
    for (const auto& t : trials) out << trial_to_json(t).dump() << "\n";
    atomic_write_file(path, out.str());
}

std::vector<TrialRecord> load_trials_jsonl(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<TrialRecord> trials;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        trials.push_back(trial_from_json(nlohmann::json::parse(line)));
    }
    return trials;
}

}  // namespace dppvae
