#include "dppvae/models.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "dppvae/errors.hpp"
#include "dppvae/io.hpp"

namespace dppvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
constexpr double kLogVarLo = -10.0;
constexpr double kLogVarHi = 10.0;

Mlp make_mlp(const std::vector<std::size_t>& sizes, Rng& rng) {
    Mlp mlp;
    mlp.layer_sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Matrix w(sizes[l], sizes[l + 1]);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(sizes[l]));
        for (double& v : w.data) v = std_dev * rng.normal();
        mlp.weights.push_back(std::move(w));
        mlp.biases.emplace_back(1, sizes[l + 1]);
    }
    return mlp;
}

Node mlp_forward(const std::vector<Node>& weights, const std::vector<Node>& biases, Node x) {
    Node h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Node affine = add(matmul(h, weights[l]), broadcast_row(biases[l], h.value().rows));
        h = (l + 1 < weights.size()) ? relu(affine) : affine;
    }
    return h;
}

struct Adam {
    std::vector<Matrix> m, v;
    long step = 0;

    void init(const std::vector<Matrix*>& params) {
        for (const Matrix* p : params) {
            m.emplace_back(p->rows, p->cols);
            v.emplace_back(p->rows, p->cols);
        }
    }

    void update(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
                const TrainConfig& config) {
        ++step;
        const double b1 = config.adam_beta1, b2 = config.adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t p = 0; p < params.size(); ++p) {
            Matrix& theta = *params[p];
            const Matrix& g = *grads[p];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[p].data[i] = b1 * m[p].data[i] + (1.0 - b1) * g.data[i];
                v[p].data[i] = b2 * v[p].data[i] + (1.0 - b2) * g.data[i] * g.data[i];
                const double mh = m[p].data[i] / bc1;
                const double vh = v[p].data[i] / bc2;
                theta.data[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.adam_eps);
            }
        }
    }
};

}  // namespace

VAEModel make_vae(std::size_t data_dim, std::size_t latent_dim,
                  const std::vector<std::size_t>& encoder_hidden,
                  const std::vector<std::size_t>& decoder_hidden, Likelihood likelihood,
                  PriorKind prior, const KernelParams& kernel, std::uint64_t seed) {
    if (data_dim == 0 || latent_dim == 0) throw InvalidParams("make_vae: zero dimension");
    if (prior == PriorKind::Dpp) {
        kernel.validate();
        if (kernel.dim() != latent_dim)
            throw InvalidParams("make_vae: kernel dim must equal latent_dim");
    }
    Rng rng = Rng::substream(seed, "init");

    std::vector<std::size_t> enc_sizes = {data_dim};
    enc_sizes.insert(enc_sizes.end(), encoder_hidden.begin(), encoder_hidden.end());
    enc_sizes.push_back(2 * latent_dim);
    std::vector<std::size_t> dec_sizes = {latent_dim};
    dec_sizes.insert(dec_sizes.end(), decoder_hidden.begin(), decoder_hidden.end());
    dec_sizes.push_back(data_dim);

    VAEModel model;
    model.encoder = make_mlp(enc_sizes, rng);
    model.decoder = make_mlp(dec_sizes, rng);
    model.data_dim = data_dim;
    model.latent_dim = latent_dim;
    model.likelihood = likelihood;
    model.prior = prior;
    model.kernel = kernel;
    return model;
}

VaeNodes VaeNodes::insert(Tape& tape, const VAEModel& model, bool requires_grad) {
    VaeNodes nodes;
    for (const Matrix& w : model.encoder.weights) nodes.enc_w.push_back(tape.leaf(w, requires_grad));
    for (const Matrix& b : model.encoder.biases) nodes.enc_b.push_back(tape.leaf(b, requires_grad));
    for (const Matrix& w : model.decoder.weights) nodes.dec_w.push_back(tape.leaf(w, requires_grad));
    for (const Matrix& b : model.decoder.biases) nodes.dec_b.push_back(tape.leaf(b, requires_grad));
    return nodes;
}

std::vector<Node> VaeNodes::all() const {
    std::vector<Node> out;
    for (const auto* group : {&enc_w, &enc_b, &dec_w, &dec_b})
        out.insert(out.end(), group->begin(), group->end());
    return out;
}

EncoderNodes encode_nodes(const VAEModel& model, const VaeNodes& params, Node x) {
    if (x.value().cols != model.data_dim)
        throw ShapeMismatch("encode: expected " + std::to_string(model.data_dim) + " features");
    Node out = mlp_forward(params.enc_w, params.enc_b, x);
    const std::size_t p = model.latent_dim;
    EncoderNodes enc;
    enc.mu = slice_cols(out, 0, p);
    enc.log_var = clamp(slice_cols(out, p, 2 * p), kLogVarLo, kLogVarHi);
    return enc;
}

Node decode_nodes(const VAEModel& model, const VaeNodes& params, Node z) {
    if (z.value().cols != model.latent_dim)
        throw ShapeMismatch("decode: expected " + std::to_string(model.latent_dim) + " latents");
    return mlp_forward(params.dec_w, params.dec_b, z);
}

EncoderOutput encode(const VAEModel& model, const Matrix& x) {
    Tape tape;
    VaeNodes params = VaeNodes::insert(tape, model, false);
    EncoderNodes enc = encode_nodes(model, params, tape.constant(x));
    return {enc.mu.value(), enc.log_var.value()};
}

Matrix reparameterize(const EncoderOutput& out, Rng& rng) {
    check_same_shape(out.mu, out.log_var, "reparameterize");
    Matrix z = out.mu;
    for (std::size_t i = 0; i < z.size(); ++i)
        z.data[i] += std::exp(0.5 * out.log_var.data[i]) * rng.normal();
    return z;
}

Node reparameterize_nodes(Tape& tape, const EncoderNodes& enc, const Matrix& eps) {
    check_same_shape(enc.mu.value(), eps, "reparameterize");
    return add(enc.mu, mul(exp(scale(enc.log_var, 0.5)), tape.constant(eps)));
}

Node reconstruction_loss(Tape& tape, const Matrix& x, Node decoder_out, Likelihood likelihood) {
    check_same_shape(x, decoder_out.value(), "reconstruction_loss");
    if (likelihood == Likelihood::Bernoulli) return bernoulli_nll_logits(x, decoder_out);
    return scale(sum(square(sub(tape.constant(x), decoder_out))), 0.5);
}

Node standard_kld(Tape& tape, const EncoderNodes& enc) {
    const Matrix& mu = enc.mu.value();
    Node ones = tape.constant(Matrix(mu.rows, mu.cols, 1.0));
    Node inner = sub(add(exp(enc.log_var), square(enc.mu)), add(enc.log_var, ones));
    return scale(sum(inner), 0.5);
}

Node dpp_kld(Tape& tape, const EncoderNodes& enc, Node z, const KernelParams& params,
             double log_normalizer) {
    const Matrix& mu = enc.mu.value();
    const double entropy_const =
        -0.5 * static_cast<double>(mu.rows) * static_cast<double>(mu.cols) * (1.0 + kLog2Pi);
    Node neg_entropy =
        add(scale(sum(enc.log_var), -0.5), tape.constant(Matrix(1, 1, entropy_const)));
    return sub(neg_entropy, dpp_log_prior(tape, z, params, log_normalizer));
}

void TrainConfig::validate(PriorKind prior) const {
    if (epochs == 0) throw InvalidConfig("train: epochs must be >= 1");
    if (batch_size == 0) throw InvalidConfig("train: batch_size must be >= 1");
    if (prior == PriorKind::Dpp && batch_size < 2)
        throw InvalidConfig("train: batch_size must be >= 2 with the dpp prior");
    if (!(learning_rate > 0.0)) throw InvalidConfig("train: learning_rate must be positive");
    if (mc_samples == 0) throw InvalidConfig("train: mc_samples must be >= 1");
}

nlohmann::json train_config_to_json(const TrainConfig& config) {
    return {{"epochs", config.epochs},
            {"batch_size", config.batch_size},
            {"learning_rate", config.learning_rate},
            {"seed", config.seed},
            {"mc_samples", config.mc_samples},
            {"adam_beta1", config.adam_beta1},
            {"adam_beta2", config.adam_beta2},
            {"adam_eps", config.adam_eps}};
}

Checkpoint train(const VAEModel& initial, const LabeledDataset& dataset,
                 const TrainConfig& config) {
    config.validate(initial.prior);
    if (dataset.size() == 0) throw InvalidConfig("train: empty dataset");
    if (dataset.features.cols != initial.data_dim)
        throw ShapeMismatch("train: dataset feature dim mismatch");

    const auto t_start = std::chrono::steady_clock::now();

    Checkpoint ckpt;
    ckpt.model = initial;
    ckpt.config_echo = train_config_to_json(config).dump();
    VAEModel& model = ckpt.model;

    Rng rng = Rng::substream(config.seed, "training");

    // normalizer depends only on (kernel, cardinality); the remainder batch
    // gets its own entry
    std::map<std::size_t, double> log_normalizers;
    auto normalizer_for = [&](std::size_t batch) {
        auto it = log_normalizers.find(batch);
        if (it == log_normalizers.end())
            it = log_normalizers.emplace(batch, log_normalizer_upper(model.kernel, batch)).first;
        return it->second;
    };

    std::vector<Matrix*> params;
    for (auto* mlp : {&model.encoder, &model.decoder}) {
        for (Matrix& w : mlp->weights) params.push_back(&w);
        for (Matrix& b : mlp->biases) params.push_back(&b);
    }
    Adam adam;
    adam.init(params);

    const std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t at = 0; at < n; at += config.batch_size) {
            const std::size_t batch = std::min(config.batch_size, n - at);
            Matrix x(batch, model.data_dim);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t j = 0; j < model.data_dim; ++j)
                    x(i, j) = dataset.features(order[at + i], j);

            Tape tape;
            VaeNodes nodes = VaeNodes::insert(tape, model, true);
            EncoderNodes enc = encode_nodes(model, nodes, tape.constant(x));

            const double inv_s = 1.0 / static_cast<double>(config.mc_samples);
            Node recon{nullptr, 0};
            Node kld{nullptr, 0};
            if (model.prior == PriorKind::StandardNormal) {
                for (std::size_t s = 0; s < config.mc_samples; ++s) {
                    Matrix eps(batch, model.latent_dim);
                    for (double& e : eps.data) e = rng.normal();
                    Node z = reparameterize_nodes(tape, enc, eps);
                    Node out = decode_nodes(model, nodes, z);
                    Node term = scale(reconstruction_loss(tape, x, out, model.likelihood), inv_s);
                    recon = s == 0 ? term : add(recon, term);
                }
                kld = standard_kld(tape, enc);
            } else {
                const double log_norm = normalizer_for(batch);
                Node prior_mean{nullptr, 0};
                for (std::size_t s = 0; s < config.mc_samples; ++s) {
                    Matrix eps(batch, model.latent_dim);
                    for (double& e : eps.data) e = rng.normal();
                    Node z = reparameterize_nodes(tape, enc, eps);
                    Node out = decode_nodes(model, nodes, z);
                    Node term = scale(reconstruction_loss(tape, x, out, model.likelihood), inv_s);
                    recon = s == 0 ? term : add(recon, term);
                    if (config.mc_samples == 1) {
                        kld = dpp_kld(tape, enc, z, model.kernel, log_norm);
                    } else {
                        Node p = scale(dpp_log_prior(tape, z, model.kernel, log_norm), inv_s);
                        prior_mean = s == 0 ? p : add(prior_mean, p);
                    }
                }
                if (config.mc_samples > 1) {
                    const double entropy_const = -0.5 * static_cast<double>(batch) *
                                                 static_cast<double>(model.latent_dim) *
                                                 (1.0 + kLog2Pi);
                    Node neg_entropy = add(scale(sum(enc.log_var), -0.5),
                                           tape.constant(Matrix(1, 1, entropy_const)));
                    kld = sub(neg_entropy, prior_mean);
                }
            }

            Node total = add(recon, kld);
            StepLoss loss{recon.value()(0, 0), kld.value()(0, 0), total.value()(0, 0)};
            if (!std::isfinite(loss.total)) {
                std::ostringstream msg;
                msg << "step " << ckpt.loss_history.size() << " (epoch " << epoch
                    << ", batch at " << at << "): recon=" << loss.recon << " kld=" << loss.kld;
                throw NonFiniteLoss(msg.str());
            }

            tape.backward(total);
            std::vector<const Matrix*> grads;
            for (Node p : nodes.all()) grads.push_back(&p.grad());
            adam.update(params, grads, config);
            ckpt.loss_history.push_back(loss);
        }
    }

    ckpt.rng_state = rng.state();
    ckpt.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return ckpt;
}

Matrix decode_latents(const VAEModel& model, const Matrix& z) {
    Tape tape;
    VaeNodes params = VaeNodes::insert(tape, model, false);
    Node out = decode_nodes(model, params, tape.constant(z));
    if (model.likelihood == Likelihood::Bernoulli) out = sigmoid(out);
    return out.value();
}

Matrix generate(const VAEModel& model, std::size_t n, Rng& rng) {
    Matrix z(n, model.latent_dim);
    for (double& v : z.data) v = rng.normal();
    return decode_latents(model, z);
}

// ---- checkpoint io -------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows}, {"cols", m.cols}, {"b64", encode_doubles(m.data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = decode_doubles(j.at("b64").get<std::string>());
    if (m.data.size() != m.rows * m.cols) throw InvalidConfig("checkpoint matrix size mismatch");
    return m;
}

nlohmann::json mlp_to_json(const Mlp& mlp) {
    nlohmann::json w = nlohmann::json::array(), b = nlohmann::json::array();
    for (const Matrix& m : mlp.weights) w.push_back(matrix_to_json(m));
    for (const Matrix& m : mlp.biases) b.push_back(matrix_to_json(m));
    return {{"layer_sizes", mlp.layer_sizes}, {"weights", w}, {"biases", b}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
    Mlp mlp;
    mlp.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    for (const auto& m : j.at("weights")) mlp.weights.push_back(matrix_from_json(m));
    for (const auto& m : j.at("biases")) mlp.biases.push_back(matrix_from_json(m));
    return mlp;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    const VAEModel& model = checkpoint.model;
    nlohmann::json history = nlohmann::json::array();
    for (const StepLoss& s : checkpoint.loss_history)
        history.push_back({s.recon, s.kld, s.total});
    nlohmann::json j = {
        {"format", "dppvae-checkpoint"},
        {"version", 1},
        {"model",
         {{"data_dim", model.data_dim},
          {"latent_dim", model.latent_dim},
          {"likelihood", model.likelihood == Likelihood::Bernoulli ? "bernoulli" : "gaussian"},
          {"prior", model.prior == PriorKind::Dpp ? "dpp" : "standard"},
          {"kernel",
           {{"alpha", model.kernel.alpha}, {"rho", model.kernel.rho},
            {"sigma", model.kernel.sigma}}},
          {"encoder", mlp_to_json(model.encoder)},
          {"decoder", mlp_to_json(model.decoder)}}},
        {"loss_history", history},
        {"config", nlohmann::json::parse(checkpoint.config_echo.empty() ? "null"
                                                                        : checkpoint.config_echo)},
        {"rng_state", checkpoint.rng_state},
        {"train_seconds", checkpoint.train_seconds}};
    atomic_write_file(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.value("format", "") != "dppvae-checkpoint" || j.value("version", 0) != 1)
        throw InvalidConfig("not a version-1 checkpoint: " + path);
    Checkpoint ckpt;
    const auto& jm = j.at("model");
    VAEModel& model = ckpt.model;
    model.data_dim = jm.at("data_dim").get<std::size_t>();
    model.latent_dim = jm.at("latent_dim").get<std::size_t>();
    model.likelihood = jm.at("likelihood").get<std::string>() == "bernoulli"
                           ? Likelihood::Bernoulli
                           : Likelihood::GaussianIdentity;
    model.prior =
        jm.at("prior").get<std::string>() == "dpp" ? PriorKind::Dpp : PriorKind::StandardNormal;
    model.kernel.alpha = jm.at("kernel").at("alpha").get<double>();
    model.kernel.rho = jm.at("kernel").at("rho").get<std::vector<double>>();
    model.kernel.sigma = jm.at("kernel").at("sigma").get<std::vector<double>>();
    model.encoder = mlp_from_json(jm.at("encoder"));
    model.decoder = mlp_from_json(jm.at("decoder"));
    for (const auto& s : j.at("loss_history"))
        ckpt.loss_history.push_back({s.at(0).get<double>(), s.at(1).get<double>(),
                                     s.at(2).get<double>()});
    ckpt.config_echo = j.at("config").is_null() ? "" : j.at("config").dump();
    ckpt.rng_state = j.at("rng_state").get<std::string>();
    ckpt.train_seconds = j.at("train_seconds").get<double>();
    return ckpt;
}

}  // namespace dppvae
