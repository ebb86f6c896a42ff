#ifndef DPPVAE_VERSION_HPP
#define DPPVAE_VERSION_HPP

#define DPPVAE_VERSION "0.1.0"

#endif
