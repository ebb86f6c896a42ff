#ifndef DPPVAE_MODELS_HPP
#define DPPVAE_MODELS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dppvae/autodiff.hpp"
#include "dppvae/data.hpp"
#include "dppvae/dpp.hpp"
#include "dppvae/matrix.hpp"
#include "dppvae/rng.hpp"

namespace dppvae {

enum class Likelihood { Bernoulli, GaussianIdentity };
enum class PriorKind { StandardNormal, Dpp };

struct Mlp {
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output
    std::vector<Matrix> weights;           // layer_sizes[i] x layer_sizes[i+1]
    std::vector<Matrix> biases;            // 1 x layer_sizes[i+1]
};

struct VAEModel {
    Mlp encoder;  // data_dim -> ... -> 2 * latent_dim (mu, log_var)
    Mlp decoder;  // latent_dim -> ... -> data_dim
    std::size_t data_dim = 0;
    std::size_t latent_dim = 0;
    Likelihood likelihood = Likelihood::GaussianIdentity;
    PriorKind prior = PriorKind::StandardNormal;
    KernelParams kernel;  // only meaningful when prior == Dpp
};

/// Fresh model with He-normal weights and zero biases drawn from the "init"
/// substream of `seed`.
VAEModel make_vae(std::size_t data_dim, std::size_t latent_dim,
                  const std::vector<std::size_t>& encoder_hidden,
                  const std::vector<std::size_t>& decoder_hidden, Likelihood likelihood,
                  PriorKind prior, const KernelParams& kernel, std::uint64_t seed);

struct EncoderOutput {
    Matrix mu;       // B x P
    Matrix log_var;  // B x P, clamped to [-10, 10]
};

struct EncoderNodes {
    Node mu;
    Node log_var;
};

/// Per-step view of the model parameters as tape leaves.
struct VaeNodes {
    std::vector<Node> enc_w, enc_b, dec_w, dec_b;
    static VaeNodes insert(Tape& tape, const VAEModel& model, bool requires_grad);
    std::vector<Node> all() const;
};

EncoderNodes encode_nodes(const VAEModel& model, const VaeNodes& params, Node x);
/// Decoder output before the likelihood nonlinearity (Bernoulli logits /
/// Gaussian means).
Node decode_nodes(const VAEModel& model, const VaeNodes& params, Node z);

/// Deterministic posterior parameters for a batch.
EncoderOutput encode(const VAEModel& model, const Matrix& x);

/// z = mu + exp(log_var / 2) * eps, eps ~ N(0, I)
Matrix reparameterize(const EncoderOutput& out, Rng& rng);
Node reparameterize_nodes(Tape& tape, const EncoderNodes& enc, const Matrix& eps);

/// Bernoulli: summed binary cross-entropy against decoder logits.
/// Gaussian-identity: 0.5 * sum (x - x_hat)^2, additive constants dropped.
Node reconstruction_loss(Tape& tape, const Matrix& x, Node decoder_out, Likelihood likelihood);

/// Closed-form KL against the standard normal prior:
/// -1/2 sum (1 + log var - mu^2 - var).
Node standard_kld(Tape& tape, const EncoderNodes& enc);

/// KLD against the diversity prior, estimated with the reparameterized
/// sample z: exact Gaussian negative entropy minus dpp_log_prior(z).
Node dpp_kld(Tape& tape, const EncoderNodes& enc, Node z, const KernelParams& params,
             double log_normalizer);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 100;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    std::size_t mc_samples = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate(PriorKind prior) const;
};

struct StepLoss {
    double recon = 0.0;
    double kld = 0.0;
    double total = 0.0;
};

struct Checkpoint {
    VAEModel model;
    std::vector<StepLoss> loss_history;  // one entry per optimizer step
    std::string config_echo;             // JSON snapshot of the TrainConfig
    std::string rng_state;               // training stream state at exit
    double train_seconds = 0.0;
};

/// Adam on recon + kld with seeded per-epoch shuffling. Deterministic per
/// seed; throws NonFiniteLoss with the offending batch and term values.
Checkpoint train(const VAEModel& initial, const LabeledDataset& dataset,
                 const TrainConfig& config);

/// Decode latent draws z ~ N(0, I_P). Bernoulli models emit probabilities.
Matrix generate(const VAEModel& model, std::size_t n, Rng& rng);
/// Decode given latents (output nonlinearity applied for Bernoulli).
Matrix decode_latents(const VAEModel& model, const Matrix& z);

/// JSON checkpoint with base64 weight payloads; weights round-trip
/// bit-exactly.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json train_config_to_json(const TrainConfig& config);

}  // namespace dppvae

#endif
