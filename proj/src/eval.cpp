#include "dppvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dppvae/errors.hpp"
#include "dppvae/io.hpp"

namespace dppvae {

namespace {

Matrix with_bias_column(const Matrix& x) {
    Matrix out(x.rows, x.cols + 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = x(i, j);
        out(i, x.cols) = 1.0;
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (std::size_t i = 0; i < p.rows; ++i) {
        double hi = p(i, 0);
        for (std::size_t j = 1; j < p.cols; ++j) hi = std::max(hi, p(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) {
            p(i, j) = std::exp(p(i, j) - hi);
            s += p(i, j);
        }
        for (std::size_t j = 0; j < p.cols; ++j) p(i, j) /= s;
    }
    return p;
}

struct GdProblem {
    const Matrix& xb;  // features with bias column
    const std::vector<int>& labels;
    std::size_t n_classes;
    double l2;

    double loss(const Matrix& w) const {
        const Matrix p = softmax_rows(matmul(xb, transpose(w)));
        double ce = 0.0;
        for (std::size_t i = 0; i < xb.rows; ++i)
            ce -= std::log(std::max(p(i, labels[i]), 1e-300));
        ce /= static_cast<double>(xb.rows);
        double reg = 0.0;
        for (std::size_t c = 0; c < w.rows; ++c)
            for (std::size_t j = 0; j + 1 < w.cols; ++j) reg += w(c, j) * w(c, j);
        return ce + 0.5 * l2 * reg;
    }

    Matrix grad(const Matrix& w) const {
        Matrix p = softmax_rows(matmul(xb, transpose(w)));
        for (std::size_t i = 0; i < xb.rows; ++i) p(i, labels[i]) -= 1.0;
        Matrix g = matmul(transpose(p), xb);
        const double inv_n = 1.0 / static_cast<double>(xb.rows);
        for (double& v : g.data) v *= inv_n;
        for (std::size_t c = 0; c < w.rows; ++c)
            for (std::size_t j = 0; j + 1 < w.cols; ++j) g(c, j) += l2 * w(c, j);
        return g;
    }
};

LogitModel gd_fit(const Matrix& features, const std::vector<int>& labels,
                  std::size_t n_classes, double l2) {
    const Matrix xb = with_bias_column(features);
    GdProblem prob{xb, labels, n_classes, l2};

    LogitModel model;
    model.weights = Matrix(n_classes, xb.cols);
    model.l2_penalty = l2;

    double step = 1.0;
    double loss = prob.loss(model.weights);
    for (int iter = 0; iter < 10000; ++iter) {
        const Matrix g = prob.grad(model.weights);
        const double gnorm = frobenius_norm(g);
        if (gnorm < 1e-6) {
            model.converged = true;
            return model;
        }
        // Armijo backtracking, warm-started from twice the last accepted step
        step = std::min(step * 2.0, 1e4);
        const double g2 = gnorm * gnorm;
        for (int shrink = 0; shrink < 60; ++shrink) {
            Matrix trial = model.weights;
            for (std::size_t i = 0; i < trial.size(); ++i) trial.data[i] -= step * g.data[i];
            const double trial_loss = prob.loss(trial);
            if (trial_loss <= loss - 1e-4 * step * g2) {
                model.weights = std::move(trial);
                loss = trial_loss;
                break;
            }
            step *= 0.5;
        }
    }
    model.converged = false;  // best-so-far weights
    return model;
}

std::vector<int> stratified_fold_assignment(const std::vector<int>& labels, std::size_t n_folds,
                                            Rng& rng) {
    std::map<int, std::vector<std::size_t>> pools;
    for (std::size_t i = 0; i < labels.size(); ++i) pools[labels[i]].push_back(i);
    std::vector<int> fold(labels.size(), 0);
    for (auto& [cls, pool] : pools) {
        (void)cls;
        rng.shuffle(pool);
        for (std::size_t i = 0; i < pool.size(); ++i)
            fold[pool[i]] = static_cast<int>(i % n_folds);
    }
    return fold;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), x.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = x(idx[i], j);
    return out;
}

}  // namespace

Matrix LogitModel::predict_proba(const Matrix& features) const {
    if (features.cols + 1 != weights.cols)
        throw ShapeMismatch("logit: feature count mismatch");
    return softmax_rows(matmul(with_bias_column(features), transpose(weights)));
}

std::vector<int> LogitModel::predict(const Matrix& features) const {
    const Matrix p = predict_proba(features);
    std::vector<int> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < p.cols; ++j)
            if (p(i, j) > p(i, arg)) arg = j;  // ties stay at the lowest index
        out[i] = static_cast<int>(arg);
    }
    return out;
}

LogitModel fit_logit(const Matrix& features, const std::vector<int>& labels,
                     const std::vector<double>& l2_grid, std::size_t cv_folds,
                     std::uint64_t seed) {
    if (features.rows != labels.size()) throw ShapeMismatch("fit_logit: label count mismatch");
    if (l2_grid.empty()) throw InvalidParams("fit_logit: empty l2 grid");
    std::set<int> classes(labels.begin(), labels.end());
    if (classes.size() < 2) throw SingleClass("fit_logit: need at least two classes");
    const std::size_t n_classes = static_cast<std::size_t>(*classes.rbegin()) + 1;

    double chosen = l2_grid.front();
    if (l2_grid.size() > 1 && cv_folds >= 2) {
        Rng rng = Rng::substream(seed, "logit.cv");
        const auto fold = stratified_fold_assignment(labels, cv_folds, rng);
        double best_score = -1.0;
        for (double l2 : l2_grid) {
            double score = 0.0;
            for (std::size_t f = 0; f < cv_folds; ++f) {
                std::vector<std::size_t> tr, te;
                for (std::size_t i = 0; i < labels.size(); ++i)
                    (fold[i] == static_cast<int>(f) ? te : tr).push_back(i);
                if (te.empty() || tr.empty()) continue;
                std::vector<int> ytr, yte;
                for (std::size_t i : tr) ytr.push_back(labels[i]);
                for (std::size_t i : te) yte.push_back(labels[i]);
                std::set<int> tr_classes(ytr.begin(), ytr.end());
                if (tr_classes.size() < 2) continue;
                const LogitModel m = gd_fit(gather_rows(features, tr), ytr, n_classes, l2);
                score += evaluate(m, gather_rows(features, te), yte).macro_f1;
            }
            if (score > best_score + 1e-12) {
                best_score = score;
                chosen = l2;
            }
        }
    }
    return gd_fit(features, labels, n_classes, chosen);
}

MetricsReport evaluate(const LogitModel& model, const Matrix& features,
                       const std::vector<int>& labels) {
    const std::vector<int> pred = model.predict(features);
    const std::size_t k = model.n_classes();
    MetricsReport r;
    r.confusion.assign(k, std::vector<long>(k, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) ++r.confusion[labels[i]][pred[i]];

    r.precision.resize(k);
    r.recall.resize(k);
    r.f1.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        long tp = r.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += r.confusion[o][c];
            fn += r.confusion[c][o];
        }
        r.precision[c] = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        r.recall[c] = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double pr = r.precision[c] + r.recall[c];
        r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
        r.macro_precision += r.precision[c] / static_cast<double>(k);
        r.macro_recall += r.recall[c] / static_cast<double>(k);
        r.macro_f1 += r.f1[c] / static_cast<double>(k);
    }
    for (std::size_t c = 0; c < k; ++c) r.class_names[static_cast<int>(c)] = std::to_string(c);
    return r;
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw InvalidParams("average_reports: no reports");
    const std::size_t k = reports.front().precision.size();
    MetricsReport out;
    out.precision.assign(k, 0.0);
    out.recall.assign(k, 0.0);
    out.f1.assign(k, 0.0);
    out.confusion.assign(k, std::vector<long>(k, 0));
    const double inv = 1.0 / static_cast<double>(reports.size());
    for (const auto& r : reports) {
        if (r.precision.size() != k) throw ShapeMismatch("average_reports: class count varies");
        for (std::size_t c = 0; c < k; ++c) {
            out.precision[c] += inv * r.precision[c];
            out.recall[c] += inv * r.recall[c];
            out.f1[c] += inv * r.f1[c];
            for (std::size_t o = 0; o < k; ++o) out.confusion[c][o] += r.confusion[c][o];
        }
        out.macro_precision += inv * r.macro_precision;
        out.macro_recall += inv * r.macro_recall;
        out.macro_f1 += inv * r.macro_f1;
    }
    out.class_names = reports.front().class_names;
    return out;
}

BalancedCv balanced_cv(const std::vector<int>& labels, std::size_t n_folds,
                       std::size_t per_class_test, std::uint64_t seed) {
    if (n_folds < 2) throw InvalidParams("balanced_cv: need at least 2 folds");
    std::map<int, std::vector<std::size_t>> pools;
    for (std::size_t i = 0; i < labels.size(); ++i) pools[labels[i]].push_back(i);

    std::size_t min_class = labels.size();
    for (const auto& [cls, pool] : pools) {
        (void)cls;
        min_class = std::min(min_class, pool.size());
    }
    BalancedCv out;
    out.per_class_test = per_class_test;
    if (per_class_test * n_folds > min_class) {
        out.per_class_test = min_class / n_folds;
        out.reduced = true;
        if (out.per_class_test == 0)
            throw TooFewSamples("balanced_cv: smallest class cannot fill one sample per fold");
    }

    Rng rng = Rng::substream(seed, "balanced_cv");
    std::vector<std::vector<std::size_t>> test_folds(n_folds);
    for (auto& [cls, pool] : pools) {
        (void)cls;
        const auto picks =
            rng.sample_without_replacement(pool.size(), n_folds * out.per_class_test);
        for (std::size_t i = 0; i < picks.size(); ++i)
            test_folds[i / out.per_class_test].push_back(pool[picks[i]]);
    }
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::sort(test_folds[f].begin(), test_folds[f].end());
        std::vector<std::size_t> train;
        std::vector<bool> in_test(labels.size(), false);
        for (std::size_t i : test_folds[f]) in_test[i] = true;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (!in_test[i]) train.push_back(i);
        out.folds.emplace_back(std::move(train), test_folds[f]);
    }
    return out;
}

Matrix latent_features(const VAEModel& model, const Matrix& features) {
    return encode(model, features).mu;
}

BalanceAudit audit_balance(const Matrix& samples, const LogitModel& reference) {
    const std::vector<int> pred = reference.predict(samples);
    const std::size_t k = reference.n_classes();
    const std::size_t n_samples = samples.rows;

    BalanceAudit audit;
    audit.n_samples = n_samples;
    audit.counts.assign(k, 0);
    for (int p : pred) ++audit.counts[p];
    audit.percent.resize(k);
    audit.ci_lo.resize(k);
    audit.ci_hi.resize(k);
    const double z = 1.959963984540054;  // 97.5% normal quantile
    const double n = static_cast<double>(n_samples);
    for (std::size_t c = 0; c < k; ++c) {
        const double p = static_cast<double>(audit.counts[c]) / n;
        audit.percent[c] = 100.0 * p;
        const double denom = 1.0 + z * z / n;
        const double center = (p + z * z / (2.0 * n)) / denom;
        const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
        audit.ci_lo[c] = 100.0 * std::max(0.0, center - half);
        audit.ci_hi[c] = 100.0 * std::min(1.0, center + half);
    }
    return audit;
}

BalanceAudit audit_generated_balance(const VAEModel& generator, std::size_t n_samples,
                                     const LogitModel& reference, Rng& rng) {
    return audit_balance(generate(generator, n_samples, rng), reference);
}

std::vector<ReplayFrame> replay_export(const VAEModel& model,
                                       const std::vector<TrialRecord>& trials,
                                       const Window& train_window,
                                       const std::vector<Window>& test_windows,
                                       std::size_t grid_size, double logit_l2,
                                       std::uint64_t seed) {
    if (grid_size < 2) throw InvalidParams("replay_export: grid_size too small");
    Standardizer stats;
    const LabeledDataset train_ds = window_features(trials, train_window, stats);
    const Matrix train_latents = latent_features(model, train_ds.features);
    const PCAModel pca = pca_fit(train_latents, 2);
    const Matrix train2d = pca.transform(train_latents);
    const LogitModel logit = fit_logit(train2d, train_ds.labels, {logit_l2}, 1, seed);
    const std::size_t k = logit.n_classes();

    // bounding box frozen to the training window, padded 10% per side
    double x_lo = train2d(0, 0), x_hi = train2d(0, 0);
    double y_lo = train2d(0, 1), y_hi = train2d(0, 1);
    for (std::size_t i = 0; i < train2d.rows; ++i) {
        x_lo = std::min(x_lo, train2d(i, 0));
        x_hi = std::max(x_hi, train2d(i, 0));
        y_lo = std::min(y_lo, train2d(i, 1));
        y_hi = std::max(y_hi, train2d(i, 1));
    }
    const double x_pad = std::max(0.1 * (x_hi - x_lo), 1e-6);
    const double y_pad = std::max(0.1 * (y_hi - y_lo), 1e-6);
    x_lo -= x_pad;
    x_hi += x_pad;
    y_lo -= y_pad;
    y_hi += y_pad;

    // region raster at cell centers, shared by every frame
    Matrix cells(grid_size * grid_size, 2);
    for (std::size_t r = 0; r < grid_size; ++r)
        for (std::size_t c = 0; c < grid_size; ++c) {
            cells(r * grid_size + c, 0) =
                x_lo + (x_hi - x_lo) * (static_cast<double>(c) + 0.5) /
                           static_cast<double>(grid_size);
            cells(r * grid_size + c, 1) =
                y_lo + (y_hi - y_lo) * (static_cast<double>(r) + 0.5) /
                           static_cast<double>(grid_size);
        }
    const std::vector<int> grid = logit.predict(cells);

    std::vector<ReplayFrame> frames;
    for (const Window& w : test_windows) {
        const LabeledDataset ds = window_features(trials, w, stats);
        const Matrix pts = pca.transform(latent_features(model, ds.features));

        ReplayFrame frame;
        frame.window = w;
        frame.points = pts;
        for (const auto& t : trials) {
            frame.trial_ids.push_back(t.trial_id);
            frame.true_labels.push_back(t.odor);
        }
        frame.region_of_trial = logit.predict(pts);
        frame.grid_size = grid_size;
        frame.x_lo = x_lo;
        frame.x_hi = x_hi;
        frame.y_lo = y_lo;
        frame.y_hi = y_hi;
        frame.region_grid = grid;

        std::map<int, std::vector<double>> occupancy;
        std::map<int, std::size_t> class_totals;
        for (std::size_t i = 0; i < frame.true_labels.size(); ++i)
            ++class_totals[frame.true_labels[i]];
        for (const auto& [cls, total] : class_totals) {
            std::vector<double> frac(k, 0.0);
            for (std::size_t i = 0; i < frame.true_labels.size(); ++i)
                if (frame.true_labels[i] == cls)
                    frac[frame.region_of_trial[i]] += 1.0 / static_cast<double>(total);
            occupancy[cls] = std::move(frac);
        }
        frame.class_occupancy = std::move(occupancy);
        frames.push_back(std::move(frame));
    }
    return frames;
}

// ---- serialization -------------------------------------------------------

std::string metrics_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "class,precision,recall,f1\n";
    for (std::size_t c = 0; c < report.precision.size(); ++c) {
        const int cls = static_cast<int>(c);
        const auto it = report.class_names.find(cls);
        out << (it != report.class_names.end() ? it->second : std::to_string(cls)) << ","
            << format_double(report.precision[c]) << "," << format_double(report.recall[c])
            << "," << format_double(report.f1[c]) << "\n";
    }
    out << "avg," << format_double(report.macro_precision) << ","
        << format_double(report.macro_recall) << "," << format_double(report.macro_f1) << "\n";
    return out.str();
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t c = 0; c < report.precision.size(); ++c) {
        const int cls = static_cast<int>(c);
        const auto it = report.class_names.find(cls);
        per_class[it != report.class_names.end() ? it->second : std::to_string(cls)] = {
            {"precision", report.precision[c]},
            {"recall", report.recall[c]},
            {"f1", report.f1[c]}};
    }
    return {{"per_class", per_class},
            {"macro",
             {{"precision", report.macro_precision},
              {"recall", report.macro_recall},
              {"f1", report.macro_f1}}},
            {"confusion", report.confusion}};
}

nlohmann::json frame_to_json(const ReplayFrame& frame) {
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t i = 0; i < frame.points.rows; ++i)
        points.push_back({frame.points(i, 0), frame.points(i, 1)});
    nlohmann::json occupancy = nlohmann::json::object();
    for (const auto& [cls, frac] : frame.class_occupancy)
        occupancy[std::to_string(cls)] = frac;
    return {{"schema_version", 1},
            {"window", {frame.window.start, frame.window.end}},
            {"trial_ids", frame.trial_ids},
            {"true_labels", frame.true_labels},
            {"points", points},
            {"region_of_trial", frame.region_of_trial},
            {"grid_size", frame.grid_size},
            {"bbox", {frame.x_lo, frame.x_hi, frame.y_lo, frame.y_hi}},
            {"region_grid", frame.region_grid},
            {"class_occupancy", occupancy}};
}

ReplayFrame frame_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != 1)
        throw InvalidConfig("unsupported replay frame schema");
    ReplayFrame frame;
    frame.window = {j.at("window").at(0).get<double>(), j.at("window").at(1).get<double>()};
    frame.trial_ids = j.at("trial_ids").get<std::vector<int>>();
    frame.true_labels = j.at("true_labels").get<std::vector<int>>();
    const auto& pts = j.at("points");
    frame.points = Matrix(pts.size(), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        frame.points(i, 0) = pts.at(i).at(0).get<double>();
        frame.points(i, 1) = pts.at(i).at(1).get<double>();
    }
    frame.region_of_trial = j.at("region_of_trial").get<std::vector<int>>();
    frame.grid_size = j.at("grid_size").get<std::size_t>();
    frame.x_lo = j.at("bbox").at(0).get<double>();
    frame.x_hi = j.at("bbox").at(1).get<double>();
    frame.y_lo = j.at("bbox").at(2).get<double>();
    frame.y_hi = j.at("bbox").at(3).get<double>();
    frame.region_grid = j.at("region_grid").get<std::vector<int>>();
    for (const auto& [key, frac] : j.at("class_occupancy").items())
        frame.class_occupancy[std::stoi(key)] = frac.get<std::vector<double>>();
    return frame;
}

void save_frames_jsonl(const std::vector<ReplayFrame>& frames, const std::string& path) {
    std::ostringstream out;
    for (const auto& f : frames) out << frame_to_json(f).dump() << "\n";
    atomic_write_file(path, out.str());
}

std::vector<ReplayFrame> load_frames_jsonl(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<ReplayFrame> frames;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        frames.push_back(frame_from_json(nlohmann::json::parse(line)));
    }
    return frames;
}

std::string frame_to_svg(const ReplayFrame& frame) {
    static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
                                    "#937860", "#da8bc3", "#8c8c8c"};
    const int size = 600;
    const std::size_t g = frame.grid_size;
    const double cw = static_cast<double>(size) / static_cast<double>(g);
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << size << "' height='" << size
        << "'>\n";
    for (std::size_t r = 0; r < g; ++r)
        for (std::size_t c = 0; c < g; ++c) {
            const int cls = frame.region_grid[r * g + c];
            svg << "<rect x='" << c * cw << "' y='" << (g - 1 - r) * cw << "' width='" << cw + 0.5
                << "' height='" << cw + 0.5 << "' fill='" << palette[cls % 8]
                << "' fill-opacity='0.25'/>\n";
        }
    auto sx = [&](double x) { return (x - frame.x_lo) / (frame.x_hi - frame.x_lo) * size; };
    auto sy = [&](double y) { return size - (y - frame.y_lo) / (frame.y_hi - frame.y_lo) * size; };
    for (std::size_t i = 0; i < frame.points.rows; ++i) {
        svg << "<circle cx='" << sx(frame.points(i, 0)) << "' cy='" << sy(frame.points(i, 1))
            << "' r='4' fill='" << palette[frame.true_labels[i] % 8]
            << "' stroke='black' stroke-width='0.5'/>\n";
    }
    svg << "<text x='10' y='20' font-family='sans-serif' font-size='14'>[" << frame.window.start
        << ", " << frame.window.end << "] s</text>\n</svg>\n";
    return svg.str();
}

}  // namespace dppvae
