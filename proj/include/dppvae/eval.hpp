#ifndef DPPVAE_EVAL_HPP
#define DPPVAE_EVAL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dppvae/data.hpp"
#include "dppvae/linalg.hpp"
#include "dppvae/matrix.hpp"
#include "dppvae/models.hpp"

namespace dppvae {

struct LogitModel {
    Matrix weights;  // n_classes x (n_features + 1); bias is the last column
    double l2_penalty = 0.0;
    bool converged = false;

    std::size_t n_classes() const { return weights.rows; }
    std::size_t n_features() const { return weights.cols - 1; }

    Matrix predict_proba(const Matrix& features) const;  // rows sum to 1
    std::vector<int> predict(const Matrix& features) const;  // argmax, ties -> lowest class
};

/// L2-regularized multinomial logistic regression by full-batch gradient
/// descent (Armijo backtracking) until the gradient norm drops below 1e-6 or
/// 10,000 iterations. The penalty is chosen from l2_grid by stratified inner
/// CV on macro-F1. Deterministic per seed.
LogitModel fit_logit(const Matrix& features, const std::vector<int>& labels,
                     const std::vector<double>& l2_grid, std::size_t cv_folds,
                     std::uint64_t seed);

struct MetricsReport {
    std::vector<double> precision, recall, f1;  // per class
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    std::vector<std::vector<long>> confusion;  // rows = true class
    std::vector<int> fold_of_sample;           // fold assignments when aggregated over CV
    std::map<int, std::string> class_names;
};

MetricsReport evaluate(const LogitModel& model, const Matrix& features,
                       const std::vector<int>& labels);

/// Mean of per-class metrics across folds; confusion matrices are summed.
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

/// Balanced test folds: per_class_test samples of every class per fold,
/// disjoint across folds; everything else (including the class surplus)
/// trains. per_class_test shrinks to floor(min_class / n_folds) with a
/// warning flag when a class is too small.
struct BalancedCv {
    std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> folds;
    std::size_t per_class_test = 0;
    bool reduced = false;
};

BalancedCv balanced_cv(const std::vector<int>& labels, std::size_t n_folds,
                       std::size_t per_class_test, std::uint64_t seed);

/// Encoder posterior means as classification features.
Matrix latent_features(const VAEModel& model, const Matrix& features);

struct BalanceAudit {
    std::vector<long> counts;
    std::vector<double> percent;
    std::vector<double> ci_lo, ci_hi;  // 95% Wilson intervals, in percent
    std::size_t n_samples = 0;
};

/// Label samples with the reference classifier and report class
/// percentages with binomial intervals.
BalanceAudit audit_balance(const Matrix& samples, const LogitModel& reference);

/// Generate n samples from the model, then audit_balance them.
BalanceAudit audit_generated_balance(const VAEModel& generator, std::size_t n_samples,
                                     const LogitModel& reference, Rng& rng);

struct ReplayFrame {
    Window window;
    std::vector<int> trial_ids;
    std::vector<int> true_labels;
    Matrix points;                         // n_trials x 2 projected coordinates
    std::vector<int> region_of_trial;      // predicted class at each point
    std::size_t grid_size = 0;
    double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;  // fixed bounding box
    std::vector<int> region_grid;          // grid_size*grid_size class labels, row-major
    // occupancy[c] = fraction of class-c trials falling in each class region
    std::map<int, std::vector<double>> class_occupancy;
};

/// Latent replay pipeline: PCA(2) and a multinomial logit fitted on the
/// training window's latent means, then every requested window projected
/// through the same transforms. The region grid spans the training window's
/// bounding box padded 10% and is identical across frames.
std::vector<ReplayFrame> replay_export(const VAEModel& model,
                                       const std::vector<TrialRecord>& trials,
                                       const Window& train_window,
                                       const std::vector<Window>& test_windows,
                                       std::size_t grid_size, double logit_l2,
                                       std::uint64_t seed);

// ---- serialization -------------------------------------------------------

std::string metrics_to_csv(const MetricsReport& report);
nlohmann::json metrics_to_json(const MetricsReport& report);

nlohmann::json frame_to_json(const ReplayFrame& frame);
ReplayFrame frame_from_json(const nlohmann::json& j);
void save_frames_jsonl(const std::vector<ReplayFrame>& frames, const std::string& path);
std::vector<ReplayFrame> load_frames_jsonl(const std::string& path);

/// Presentation-only rendering of one frame (points over the region raster).
std::string frame_to_svg(const ReplayFrame& frame);

}  // namespace dppvae

#endif
