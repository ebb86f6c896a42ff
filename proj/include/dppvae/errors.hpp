#ifndef DPPVAE_ERRORS_HPP
#define DPPVAE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dppvae {

#define DPPVAE_DEFINE_ERROR(Name, Base)                   \
    struct Name : Base {                                   \
        explicit Name(const std::string& what)             \
            : Base(#Name ": " + what) {}                   \
    };

// numeric
DPPVAE_DEFINE_ERROR(NotPositiveDefinite, std::runtime_error)
DPPVAE_DEFINE_ERROR(NoConvergence, std::runtime_error)
DPPVAE_DEFINE_ERROR(DegenerateInput, std::runtime_error)
DPPVAE_DEFINE_ERROR(NegativeTail, std::runtime_error)
DPPVAE_DEFINE_ERROR(NonFiniteLoss, std::runtime_error)

// shape / argument
DPPVAE_DEFINE_ERROR(ShapeMismatch, std::invalid_argument)
DPPVAE_DEFINE_ERROR(InvalidParams, std::invalid_argument)
DPPVAE_DEFINE_ERROR(DomainError, std::invalid_argument)
DPPVAE_DEFINE_ERROR(NotScalarLoss, std::invalid_argument)
DPPVAE_DEFINE_ERROR(TapeConsumed, std::logic_error)

// data / io
DPPVAE_DEFINE_ERROR(BadMagic, std::runtime_error)
DPPVAE_DEFINE_ERROR(TruncatedFile, std::runtime_error)
DPPVAE_DEFINE_ERROR(DimensionMismatch, std::runtime_error)
DPPVAE_DEFINE_ERROR(InsufficientSamples, std::runtime_error)
DPPVAE_DEFINE_ERROR(InvalidConfig, std::runtime_error)
DPPVAE_DEFINE_ERROR(UnknownWindow, std::runtime_error)
DPPVAE_DEFINE_ERROR(SingleClass, std::runtime_error)
DPPVAE_DEFINE_ERROR(TooFewSamples, std::runtime_error)

#undef DPPVAE_DEFINE_ERROR

}  // namespace dppvae

#endif
