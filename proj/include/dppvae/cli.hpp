#ifndef DPPVAE_CLI_HPP
#define DPPVAE_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace dppvae::cli {

/// Parse + schema-validate a config file. Unknown keys anywhere are
/// rejected (InvalidConfig) before any compute runs.
nlohmann::json load_config_file(const std::string& path);
void validate_config(const nlohmann::json& config);

/// Apply one --override KEY=VALUE (dotted path, JSON-parsed value).
void apply_override(nlohmann::json& config, const std::string& key_value);

/// Content hash of the canonical config dump (hex).
std::string config_hash_hex(const nlohmann::json& config);

/// Each command validates its config, computes, and writes artifacts plus a
/// manifest under <out>/<command>_s<seed>_<hash8>/. Returns the run
/// directory. Errors are thrown; the exit-code mapping lives in run_cli.
std::string cmd_train(const nlohmann::json& config);
std::string cmd_classify(const nlohmann::json& config);
std::string cmd_generate(const nlohmann::json& config);
std::string cmd_replay(const nlohmann::json& config);

/// Oracle self-checks (ESP brute force, gradient checks, quadrature
/// spectrum, bound sandwich). Prints one line per check; returns the number
/// of failures. perturb_esp is a test hook that corrupts the ESP input to
/// prove the harness catches regressions.
int cmd_selftest(bool perturb_esp, std::ostream& out);

/// Full argv entry point: subcommand dispatch, --config/--seed/--out/
/// --override handling, and the documented exit codes (2 config, 3 data,
/// 4 numeric failure).
int run_cli(int argc, char** argv);

}  // namespace dppvae::cli

#endif
