#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emostim/gateway.hpp"

namespace emostim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct CliConfig {
  std::optional<std::filesystem::path> catalog;
  std::optional<std::filesystem::path> asset_dir;
  std::optional<std::filesystem::path> store;
  int workers = 4;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> format;
  GatewayConfig gateway;
};

// Values given on the command line; unset fields defer to env and file.
struct CliOverrides {
  std::optional<std::filesystem::path> catalog;
  std::optional<std::filesystem::path> asset_dir;
  std::optional<std::filesystem::path> store;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> format;
  std::optional<std::string> provider;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_environment();

// Flags over EMOSTIM_* environment variables over the config file.
// Throws Error(schema) for a malformed file value.
CliConfig resolve_config(const nlohmann::json& file, const EnvLookup& env,
                         const CliOverrides& flags);

// Returns 0 on success, 1 on usage errors and 2 on runtime errors.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err, const EnvLookup& env = process_environment());

}  // namespace emostim
