#ifndef DPPVAE_DATA_HPP
#define DPPVAE_DATA_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppvae/matrix.hpp"
#include "dppvae/rng.hpp"

namespace dppvae {

struct LabeledDataset {
    Matrix features;                         // N x D_data
    std::vector<int> labels;                 // values in [0, n_classes)
    std::map<int, std::string> class_names;  // label -> display name
    nlohmann::json provenance;               // source, seed, filters, realized counts

    std::size_t size() const { return labels.size(); }
    std::map<int, std::size_t> class_counts() const;
};

/// IDX binary loader (big-endian; image magic 0x00000803, label magic
/// 0x00000801). Pixels are scaled to [0,1] by /255; binarize thresholds the
/// scaled value at 0.5 for the Bernoulli likelihood.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        bool binarize = false);

struct ImbalanceSpec {
    std::size_t total = 0;
    std::map<int, double> ratios;  // per-class relative weights
    int minor_class = 1;
};

/// Realized per-class counts for a total under relative weights. Two
/// classes use major = round(total * w_major / sum w), minor = max(1, rest);
/// more classes round proportionally with the largest class absorbing the
/// residue. Counts always sum to total.
std::map<int, std::size_t> imbalanced_counts(const ImbalanceSpec& spec);

/// Deterministic class-imbalanced subset. For two classes the realized
/// counts are major = round(total * w_major / sum w), minor = max(1, rest);
/// more classes round proportionally with the largest class absorbing the
/// rounding residue. Feature bytes are copied from the source untouched.
LabeledDataset subsample_imbalanced(const LabeledDataset& ds, const ImbalanceSpec& spec,
                                    std::uint64_t seed);

/// Gaussian clusters around the given centers (n_classes x dim).
LabeledDataset make_blobs(const std::vector<std::size_t>& n_per_class, std::size_t dim,
                          const Matrix& centers, double noise_std, std::uint64_t seed);

// ---- synthetic odor-trial spike generator -------------------------------

struct Window {
    double start = 0.0;
    double end = 0.0;

    double width() const { return end - start; }
    double midpoint() const { return 0.5 * (start + end); }
    bool matches(const Window& o) const;
};

struct WindowCounts {
    Window window;
    std::vector<long> counts;  // per neuron
};

struct TrialRecord {
    int trial_id = 0;
    int odor = 0;  // 0..4 -> A..E
    std::vector<WindowCounts> windows;

    const std::vector<long>& counts_for(const Window& w) const;  // UnknownWindow
};

struct ReplayInjection {
    int source_odor = 1;   // B
    int target_odor = 2;   // C
    Window window{0.6, 0.9};
    double weight = 0.8;
};

struct SpikeSimConfig {
    std::size_t n_neurons = 50;
    std::vector<std::size_t> trial_counts = {58, 41, 37, 32, 26};  // A..E
    double baseline_rate = 2.0;  // Hz
    double tuned_rate = 10.0;    // Hz
    double tuning_fraction = 0.2;
    std::optional<ReplayInjection> replay_injection;
    std::uint64_t seed = 0;

    void validate() const;  // InvalidConfig
};

std::string odor_name(int odor);

/// The window the models train on.
Window training_window();
/// 17 replay frames: a uniform 0.25 s grid from -2 s, with the final frame
/// snapped to [1.9, 2.15]. The snap overlaps [1.75, 2.0] by 0.1 s; counts
/// are drawn per window so the overlap is harmless.
std::vector<Window> replay_window_grid();
/// All windows carried by each simulated trial: the replay grid plus the
/// training window.
std::vector<Window> analysis_windows();

/// Per-odor tuned neuron subsets (deterministic per seed, overlap allowed).
std::vector<std::vector<std::size_t>> tuned_neurons(const SpikeSimConfig& config);

/// Poisson counts per (trial, window, neuron): baseline everywhere, the
/// odor's tuned subset at tuned_rate inside the training window, and the
/// target odor's training-rate template blended (by `weight`) into every
/// window whose midpoint lies inside the injection interval on source-odor
/// trials.
std::vector<TrialRecord> simulate_trials(const SpikeSimConfig& config);

/// Per-neuron standardization statistics. Fit once on the training split's
/// training window, then reused verbatim for every other window.
struct Standardizer {
    std::vector<double> means;
    std::vector<double> stds;
    bool fitted = false;
};

/// Per-neuron counts in one window as a feature matrix. Fits the
/// standardizer if it is unfitted, otherwise applies the stored statistics.
LabeledDataset window_features(const std::vector<TrialRecord>& trials, const Window& window,
                               Standardizer& standardizer);

// JSON-lines trial exchange (one TrialRecord per line, schema_version 1)
void save_trials_jsonl(const std::vector<TrialRecord>& trials, const std::string& path);
std::vector<TrialRecord> load_trials_jsonl(const std::string& path);

nlohmann::json trial_to_json(const TrialRecord& trial);
TrialRecord trial_from_json(const nlohmann::json& j);

}  // namespace dppvae

#endif
