#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dppvae/data.hpp"
#include "dppvae/dpp.hpp"
#include "dppvae/eval.hpp"
#include "dppvae/linalg.hpp"
#include "dppvae/models.hpp"
#include "dppvae/version.hpp"

namespace py = pybind11;
using namespace dppvae;

namespace {

Matrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D float64 array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::memcpy(m.data.data(), a.data(), m.size() * sizeof(double));
    return m;
}

py::array_t<double> numpy_from_matrix(const Matrix& m) {
    return py::array_t<double>({static_cast<py::ssize_t>(m.rows),
                                static_cast<py::ssize_t>(m.cols)},
                               m.data.data());
}

py::array_t<double> numpy_from_vector(const std::vector<double>& v) {
    return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

KernelParams kernel_from_kwargs(double alpha, py::object rho, py::object sigma,
                                std::size_t dim) {
    auto widths = [&](py::object o) {
        if (py::isinstance<py::float_>(o) || py::isinstance<py::int_>(o))
            return std::vector<double>(dim, o.cast<double>());
        return o.cast<std::vector<double>>();
    };
    KernelParams p;
    p.alpha = alpha;
    p.rho = widths(rho);
    p.sigma = widths(sigma);
    p.validate();
    return p;
}

TrainConfig train_config_from_dict(const py::dict& d) {
    TrainConfig c;
    if (d.contains("epochs")) c.epochs = d["epochs"].cast<std::size_t>();
    if (d.contains("batch_size")) c.batch_size = d["batch_size"].cast<std::size_t>();
    if (d.contains("learning_rate")) c.learning_rate = d["learning_rate"].cast<double>();
    if (d.contains("seed")) c.seed = d["seed"].cast<std::uint64_t>();
    if (d.contains("mc_samples")) c.mc_samples = d["mc_samples"].cast<std::size_t>();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "VAE with a diversity-encouraging determinantal prior: core operations";
    m.attr("__version__") = DPPVAE_VERSION;

    // ---- linalg ----
    m.def("cholesky", [](py::array_t<double> a) {
        const CholeskyFactor f = cholesky(matrix_from_numpy(a));
        return py::make_tuple(numpy_from_matrix(f.lower), f.jitter_applied);
    }, "Lower Cholesky factor and applied jitter", py::arg("a"));
    m.def("log_det_spd",
          [](py::array_t<double> a) { return log_det_spd(matrix_from_numpy(a)); },
          py::arg("a"));
    m.def("eigh", [](py::array_t<double> a) {
        const EigenDecomposition e = eigh(matrix_from_numpy(a));
        return py::make_tuple(numpy_from_vector(e.values), numpy_from_matrix(e.vectors));
    }, "Symmetric eigendecomposition (descending values)", py::arg("a"));

    py::class_<PCAModel>(m, "PCAModel")
        .def_property_readonly("mean", [](const PCAModel& p) { return numpy_from_matrix(p.mean); })
        .def_property_readonly("components",
                               [](const PCAModel& p) { return numpy_from_matrix(p.components); })
        .def_property_readonly("explained_variance_ratio",
                               [](const PCAModel& p) {
                                   return numpy_from_vector(p.explained_variance_ratio);
                               })
        .def("transform",
             [](const PCAModel& p, py::array_t<double> x) {
                 return numpy_from_matrix(p.transform(matrix_from_numpy(x)));
             })
        .def("inverse_transform", [](const PCAModel& p, py::array_t<double> y) {
            return numpy_from_matrix(p.inverse_transform(matrix_from_numpy(y)));
        });
    m.def("pca_fit", [](py::array_t<double> x, std::size_t n_components) {
        return pca_fit(matrix_from_numpy(x), n_components);
    }, py::arg("x"), py::arg("n_components"));

    // ---- dpp ----
    py::class_<KernelParams>(m, "KernelParams")
        .def(py::init([](double alpha, py::object rho, py::object sigma, std::size_t dim) {
                 return kernel_from_kwargs(alpha, rho, sigma, dim);
             }),
             py::arg("alpha"), py::arg("rho"), py::arg("sigma"), py::arg("dim"))
        .def_readonly("alpha", &KernelParams::alpha)
        .def_readonly("rho", &KernelParams::rho)
        .def_readonly("sigma", &KernelParams::sigma)
        .def_property_readonly("dim", &KernelParams::dim);

    m.def("quality", [](py::array_t<double> x, const KernelParams& p) {
        auto v = x.cast<std::vector<double>>();
        return quality(v, p);
    }, py::arg("x"), py::arg("params"));
    m.def("similarity", [](py::array_t<double> x, py::array_t<double> y, const KernelParams& p) {
        auto vx = x.cast<std::vector<double>>();
        auto vy = y.cast<std::vector<double>>();
        return similarity(vx, vy, p);
    }, py::arg("x"), py::arg("y"), py::arg("params"));
    m.def("kernel_matrix", [](py::array_t<double> z, const KernelParams& p) {
        Tape tape;
        Node zn = tape.leaf(matrix_from_numpy(z), false);
        return numpy_from_matrix(build_kernel_matrix(tape, zn, p).value());
    }, "Quality/similarity kernel matrix of a latent batch", py::arg("z"), py::arg("params"));

    py::class_<Spectrum>(m, "Spectrum")
        .def_property_readonly("eigenvalues",
                               [](const Spectrum& s) { return numpy_from_vector(s.eigenvalues); })
        .def_readonly("multi_indices", &Spectrum::multi_indices)
        .def_readonly("operator_trace", &Spectrum::operator_trace)
        .def_readonly("beta", &Spectrum::beta)
        .def_readonly("gamma", &Spectrum::gamma);
    m.def("continuous_spectrum", &continuous_spectrum, py::arg("params"), py::arg("m"));
    m.def("truncate_spectrum", &truncate_spectrum, py::arg("params"),
          py::arg("tail_rel") = 1e-3, py::arg("max_terms") = 10000);

    m.def("log_esp", [](py::array_t<double> log_lambdas, std::size_t k) {
        auto v = log_lambdas.cast<std::vector<double>>();
        return numpy_from_vector(esp(v, k).log_values);
    }, "log e_j for j = 0..k from log-eigenvalues", py::arg("log_lambdas"), py::arg("k"));
    m.def("normalizer_bounds", [](const Spectrum& s, std::size_t k) {
        const NormalizerBound b = normalizer_bounds(s, k);
        return py::make_tuple(b.log_lower, b.log_upper, b.m_used);
    }, py::arg("spectrum"), py::arg("k"));
    m.def("log_normalizer_upper", &log_normalizer_upper, py::arg("params"), py::arg("k"),
          py::arg("tail_rel") = 1e-3, py::arg("max_terms") = 10000);

    m.def("dpp_log_prior_value", [](py::array_t<double> z, const KernelParams& p,
                                    double log_normalizer) {
        Tape tape;
        Node zn = tape.leaf(matrix_from_numpy(z), false);
        return dpp_log_prior(tape, zn, p, log_normalizer).value()(0, 0);
    }, py::arg("z"), py::arg("params"), py::arg("log_normalizer"));
    m.def("dpp_log_prior_grad", [](py::array_t<double> z, const KernelParams& p,
                                   double log_normalizer) {
        Tape tape;
        Node zn = tape.leaf(matrix_from_numpy(z), true);
        Node prior = dpp_log_prior(tape, zn, p, log_normalizer);
        tape.backward(prior);
        return numpy_from_matrix(zn.grad());
    }, "Gradient of the batch log prior with respect to z", py::arg("z"), py::arg("params"),
          py::arg("log_normalizer"));

    // ---- models ----
    py::enum_<Likelihood>(m, "Likelihood")
        .value("Bernoulli", Likelihood::Bernoulli)
        .value("GaussianIdentity", Likelihood::GaussianIdentity);
    py::enum_<PriorKind>(m, "PriorKind")
        .value("StandardNormal", PriorKind::StandardNormal)
        .value("Dpp", PriorKind::Dpp);

    py::class_<VAEModel>(m, "VAEModel")
        .def_readonly("data_dim", &VAEModel::data_dim)
        .def_readonly("latent_dim", &VAEModel::latent_dim)
        .def_readonly("likelihood", &VAEModel::likelihood)
        .def_readonly("prior", &VAEModel::prior);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("model", &Checkpoint::model)
        .def_readonly("train_seconds", &Checkpoint::train_seconds)
        .def_property_readonly("loss_history",
                               [](const Checkpoint& c) {
                                   std::vector<double> flat;
                                   flat.reserve(c.loss_history.size() * 3);
                                   for (const StepLoss& s : c.loss_history) {
                                       flat.push_back(s.recon);
                                       flat.push_back(s.kld);
                                       flat.push_back(s.total);
                                   }
                                   return py::array_t<double>(
                                       {static_cast<py::ssize_t>(c.loss_history.size()),
                                        static_cast<py::ssize_t>(3)},
                                       flat.data());
                               })
        .def("encode",
             [](const Checkpoint& c, py::array_t<double> x) {
                 const EncoderOutput out = encode(c.model, matrix_from_numpy(x));
                 return py::make_tuple(numpy_from_matrix(out.mu),
                                       numpy_from_matrix(out.log_var));
             },
             "Posterior means and log-variances", py::arg("x"))
        .def("generate",
             [](const Checkpoint& c, std::size_t n, std::uint64_t seed) {
                 Rng rng = Rng::substream(seed, "generation");
                 return numpy_from_matrix(generate(c.model, n, rng));
             },
             py::arg("n"), py::arg("seed"))
        .def("save", [](const Checkpoint& c, const std::string& path) {
            save_checkpoint(c, path);
        });
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    m.def("make_vae", [](std::size_t data_dim, std::size_t latent_dim,
                         const std::vector<std::size_t>& encoder_hidden,
                         const std::vector<std::size_t>& decoder_hidden,
                         Likelihood likelihood, PriorKind prior, const KernelParams& kernel,
                         std::uint64_t seed) {
        return make_vae(data_dim, latent_dim, encoder_hidden, decoder_hidden, likelihood,
                        prior, kernel, seed);
    }, py::arg("data_dim"), py::arg("latent_dim"), py::arg("encoder_hidden"),
          py::arg("decoder_hidden"), py::arg("likelihood"), py::arg("prior"),
          py::arg("kernel"), py::arg("seed"));

    m.def("train", [](const VAEModel& model, py::array_t<double> features, const py::dict& cfg) {
        LabeledDataset ds;
        ds.features = matrix_from_numpy(features);
        ds.labels.assign(ds.features.rows, 0);
        return train(model, ds, train_config_from_dict(cfg));
    }, "Train on a feature matrix; config keys: epochs, batch_size, learning_rate, seed",
          py::arg("model"), py::arg("features"), py::arg("config"));

    // ---- data ----
    m.def("make_blobs", [](const std::vector<std::size_t>& n_per_class,
                           py::array_t<double> centers, double noise_std, std::uint64_t seed) {
        const Matrix c = matrix_from_numpy(centers);
        const LabeledDataset ds = make_blobs(n_per_class, c.cols, c, noise_std, seed);
        py::array_t<int> labels(static_cast<py::ssize_t>(ds.labels.size()), ds.labels.data());
        return py::make_tuple(numpy_from_matrix(ds.features), labels);
    }, py::arg("n_per_class"), py::arg("centers"), py::arg("noise_std"), py::arg("seed"));

    m.def("load_idx", [](const std::string& images, const std::string& labels, bool binarize) {
        const LabeledDataset ds = load_idx(images, labels, binarize);
        py::array_t<int> y(static_cast<py::ssize_t>(ds.labels.size()), ds.labels.data());
        return py::make_tuple(numpy_from_matrix(ds.features), y);
    }, py::arg("images"), py::arg("labels"), py::arg("binarize") = false);

    // ---- eval ----
    py::class_<LogitModel>(m, "LogitModel")
        .def_readonly("l2_penalty", &LogitModel::l2_penalty)
        .def_readonly("converged", &LogitModel::converged)
        .def("predict_proba",
             [](const LogitModel& l, py::array_t<double> x) {
                 return numpy_from_matrix(l.predict_proba(matrix_from_numpy(x)));
             })
        .def("predict", [](const LogitModel& l, py::array_t<double> x) {
            return l.predict(matrix_from_numpy(x));
        });
    m.def("fit_logit", [](py::array_t<double> features, const std::vector<int>& labels,
                          const std::vector<double>& l2_grid, std::size_t cv_folds,
                          std::uint64_t seed) {
        return fit_logit(matrix_from_numpy(features), labels, l2_grid, cv_folds, seed);
    }, py::arg("features"), py::arg("labels"), py::arg("l2_grid"), py::arg("cv_folds"),
          py::arg("seed"));
    m.def("evaluate", [](const LogitModel& model, py::array_t<double> features,
                         const std::vector<int>& labels) {
        const MetricsReport r = evaluate(model, matrix_from_numpy(features), labels);
        py::dict out;
        out["precision"] = r.precision;
        out["recall"] = r.recall;
        out["f1"] = r.f1;
        out["macro_f1"] = r.macro_f1;
        out["confusion"] = r.confusion;
        return out;
    }, py::arg("model"), py::arg("features"), py::arg("labels"));
    m.def("grad_check_logdet", [](py::array_t<double> spd, double h) {
        return grad_check([](Tape&, Node x) { return logdet_spd(x); },
                          matrix_from_numpy(spd), h);
    }, py::arg("spd"), py::arg("h") = 1e-5);
}
