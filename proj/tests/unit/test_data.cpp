#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "dppvae/data.hpp"
#include "dppvae/errors.hpp"
#include "dppvae/io.hpp"

using namespace dppvae;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

// two 28x28 images: first all 10s, second all 200s; labels 0 and 1
std::pair<std::string, std::string> tiny_idx_pair() {
    std::string img;
    push_be32(img, 0x00000803u);
    push_be32(img, 2);
    push_be32(img, 28);
    push_be32(img, 28);
    img.append(784, static_cast<char>(10));
    img.append(784, static_cast<char>(200));
    std::string lab;
    push_be32(lab, 0x00000801u);
    push_be32(lab, 2);
    lab.push_back(0);
    lab.push_back(1);
    const std::string ip = temp_path("dppvae_test_images.idx");
    const std::string lp = temp_path("dppvae_test_labels.idx");
    write_bytes(ip, img);
    write_bytes(lp, lab);
    return {ip, lp};
}

LabeledDataset indexed_two_class(std::size_t per_class) {
    // feature 0 stores the source row index so byte preservation is checkable
    LabeledDataset ds;
    ds.features = Matrix(2 * per_class, 2);
    ds.labels.resize(2 * per_class);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        ds.features(i, 0) = static_cast<double>(i);
        ds.features(i, 1) = 0.25 * static_cast<double>(i) + 0.125;
        ds.labels[i] = i < per_class ? 0 : 1;
    }
    return ds;
}

}  // namespace

TEST_CASE("idx loader: shapes, scaling, binarize, errors") {
    auto [ip, lp] = tiny_idx_pair();
    auto ds = load_idx(ip, lp);
    CHECK(ds.size() == 2);
    CHECK(ds.features.cols == 784);
    CHECK(ds.features(0, 0) == doctest::Approx(10.0 / 255.0));
    CHECK(ds.features(1, 0) == doctest::Approx(200.0 / 255.0));
    CHECK(ds.labels[0] == 0);
    CHECK(ds.labels[1] == 1);

    auto bin = load_idx(ip, lp, true);
    CHECK(bin.features(0, 0) == 0.0);
    CHECK(bin.features(1, 0) == 1.0);

    // corrupt image magic
    std::string bad = read_file(ip);
    bad[3] = 0x04;
    const std::string bp = temp_path("dppvae_test_bad.idx");
    write_bytes(bp, bad);
    CHECK_THROWS_AS(load_idx(bp, lp), BadMagic);

    // truncated pixels
    write_bytes(bp, read_file(ip).substr(0, 16 + 784 + 100));
    CHECK_THROWS_AS(load_idx(bp, lp), TruncatedFile);

    // label count mismatch
    std::string lab;
    push_be32(lab, 0x00000801u);
    push_be32(lab, 3);
    lab.append(3, '\0');
    write_bytes(bp, lab);
    CHECK_THROWS_AS(load_idx(ip, bp), DimensionMismatch);
}

TEST_CASE("subsample: paper ratios land on the stated counts") {
    auto ds = indexed_two_class(5000);
    auto counts_for = [&](double w_major) {
        ImbalanceSpec spec;
        spec.total = 5000;
        spec.ratios = {{0, w_major}, {1, 1.0}};
        spec.minor_class = 1;
        return subsample_imbalanced(ds, spec, 3).class_counts();
    };
    auto balanced = counts_for(1.0);
    CHECK(balanced[0] == 2500);
    CHECK(balanced[1] == 2500);
    auto ten = counts_for(10.0);
    CHECK(ten[1] == 455);  // 9.1%
    auto hundred = counts_for(100.0);
    CHECK(hundred[1] == 50);  // 1%
    auto thousand = counts_for(1000.0);
    CHECK(thousand[1] == 5);  // 0.1%
}

TEST_CASE("subsample: byte preservation, determinism, insufficient pool") {
    auto ds = indexed_two_class(600);
    ImbalanceSpec spec;
    spec.total = 400;
    spec.ratios = {{0, 10.0}, {1, 1.0}};
    spec.minor_class = 1;

    auto sub1 = subsample_imbalanced(ds, spec, 7);
    auto sub2 = subsample_imbalanced(ds, spec, 7);
    CHECK(max_abs_diff(sub1.features, sub2.features) == 0.0);
    CHECK(sub1.labels == sub2.labels);

    for (std::size_t i = 0; i < sub1.size(); ++i) {
        const auto src = static_cast<std::size_t>(sub1.features(i, 0));
        CHECK(ds.features(src, 1) == sub1.features(i, 1));
        CHECK(ds.labels[src] == sub1.labels[i]);
    }

    spec.total = 2000;  // needs ~1818 of class 0, pool has 600
    CHECK_THROWS_AS(subsample_imbalanced(ds, spec, 7), InsufficientSamples);
}

TEST_CASE("blobs: histogram, zero noise, separability, determinism") {
    Matrix centers = Matrix::from_rows({{3, 0, 0}, {-3, 0, 0}});
    auto ds = make_blobs({100, 10}, 3, centers, 0.5, 5);
    auto counts = ds.class_counts();
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 10);

    auto exact = make_blobs({4, 4}, 3, centers, 0.0, 5);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(exact.features(i, 0) == 3.0);

    // a linear rule on the separating axis gets >99%
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if ((ds.features(i, 0) > 0.0) == (ds.labels[i] == 0)) ++correct;
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) > 0.99);

    auto again = make_blobs({100, 10}, 3, centers, 0.5, 5);
    CHECK(max_abs_diff(ds.features, again.features) == 0.0);

    Matrix dup = Matrix::from_rows({{1, 1, 1}, {1, 1, 1}});
    CHECK_THROWS_AS(make_blobs({2, 2}, 3, dup, 0.1, 5), InvalidConfig);
}

TEST_CASE("spike simulator: trial counts and window layout") {
    SpikeSimConfig config;
    config.seed = 21;
    auto trials = simulate_trials(config);
    CHECK(trials.size() == 194);
    std::map<int, int> hist;
    for (const auto& t : trials) ++hist[t.odor];
    CHECK(hist[0] == 58);
    CHECK(hist[1] == 41);
    CHECK(hist[2] == 37);
    CHECK(hist[3] == 32);
    CHECK(hist[4] == 26);

    CHECK(replay_window_grid().size() == 17);
    CHECK(replay_window_grid().back().matches(Window{1.9, 2.15}));
    // every analysis window carried per trial, each 0.25 s wide
    for (const auto& wc : trials[0].windows)
        CHECK(wc.window.width() == doctest::Approx(0.25));
    CHECK_NOTHROW(trials[0].counts_for(training_window()));
    CHECK_THROWS_AS(trials[0].counts_for(Window{5.0, 5.25}), UnknownWindow);
}

TEST_CASE("spike simulator: flat tuning means flat class-conditional rates") {
    SpikeSimConfig config;
    config.seed = 22;
    config.tuned_rate = config.baseline_rate;
    auto trials = simulate_trials(config);
    // mean count over all neurons/trials per class in the training window
    // stays near baseline * width for every odor
    const double expect = config.baseline_rate * 0.25;
    for (int odor = 0; odor < 5; ++odor) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& t : trials) {
            if (t.odor != odor) continue;
            for (long c : t.counts_for(training_window())) {
                s += static_cast<double>(c);
                ++n;
            }
        }
        const double mean = s / static_cast<double>(n);
        const double se = std::sqrt(expect / static_cast<double>(n));
        CHECK(std::fabs(mean - expect) < 4.0 * se);
    }
}

TEST_CASE("spike simulator: replay injection plants the target template") {
    SpikeSimConfig config;
    config.seed = 23;
    config.replay_injection = ReplayInjection{1, 2, {0.6, 0.9}, 0.8};
    auto trials = simulate_trials(config);
    auto tuned = tuned_neurons(config);

    // C-tuned neurons on B trials inside the injected interval fire above
    // baseline by > 3 SE
    for (const Window& w : replay_window_grid()) {
        const bool injected = w.midpoint() >= 0.6 && w.midpoint() <= 0.9;
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& t : trials) {
            if (t.odor != 1) continue;
            const auto& counts = t.counts_for(w);
            for (std::size_t i : tuned[2]) {
                s += static_cast<double>(counts[i]);
                ++n;
            }
        }
        const double mean = s / static_cast<double>(n);
        const double baseline = config.baseline_rate * w.width();
        const double se = std::sqrt(baseline / static_cast<double>(n));
        if (injected)
            CHECK(mean - baseline > 3.0 * se);
        else if (!w.matches(training_window()))
            CHECK(std::fabs(mean - baseline) < 5.0 * se);
    }
}

TEST_CASE("spike simulator: counts match rate * duration over regenerations") {
    SpikeSimConfig config;
    config.n_neurons = 5;
    config.trial_counts = {3, 2, 2, 2, 2};
    const Window w{-1.0, -0.75};  // baseline-only window
    double s = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        config.seed = seed;
        for (const auto& t : simulate_trials(config))
            for (long c : t.counts_for(w)) {
                s += static_cast<double>(c);
                ++n;
            }
    }
    const double expect = config.baseline_rate * w.width();
    const double mean = s / static_cast<double>(n);
    CHECK(std::fabs(mean - expect) < 4.0 * std::sqrt(expect / static_cast<double>(n)));
}

TEST_CASE("window_features: standardization is fit once and reused") {
    SpikeSimConfig config;
    config.seed = 25;
    auto trials = simulate_trials(config);

    Standardizer stats;
    auto train = window_features(trials, training_window(), stats);
    CHECK(train.features.rows == 194);
    CHECK(train.features.cols == config.n_neurons);
    CHECK(stats.fitted);
    for (std::size_t j = 0; j < train.features.cols; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < train.features.rows; ++i) m += train.features(i, j);
        CHECK(std::fabs(m / static_cast<double>(train.features.rows)) < 1e-10);
    }

    const auto saved_means = stats.means;
    auto test = window_features(trials, Window{-1.0, -0.75}, stats);
    CHECK(stats.means == saved_means);  // training statistics, not recomputed
    // baseline window standardized with training-window stats sits well below
    // zero for tuned neurons, so columns need not be centered
    CHECK(test.features.rows == 194);
}

TEST_CASE("trials jsonl round trip") {
    SpikeSimConfig config;
    config.n_neurons = 7;
    config.trial_counts = {2, 1, 1, 1, 1};
    config.seed = 31;
    auto trials = simulate_trials(config);
    const std::string path = temp_path("dppvae_trials.jsonl");
    save_trials_jsonl(trials, path);
    auto loaded = load_trials_jsonl(path);
    REQUIRE(loaded.size() == trials.size());
    for (std::size_t i = 0; i < trials.size(); ++i) {
        CHECK(loaded[i].trial_id == trials[i].trial_id);
        CHECK(loaded[i].odor == trials[i].odor);
        REQUIRE(loaded[i].windows.size() == trials[i].windows.size());
        for (std::size_t w = 0; w < trials[i].windows.size(); ++w) {
            CHECK(loaded[i].windows[w].window.matches(trials[i].windows[w].window));
            CHECK(loaded[i].windows[w].counts == trials[i].windows[w].counts);
        }
    }
}
