#include "emostim/error.hpp"

#include <array>

namespace emostim {

std::string_view to_string(ErrorKind kind) {
  static constexpr std::array<std::string_view, 24> names{
      "invalid_argument",     "not_found",        "wrong_modality",
      "wrong_polarity",       "placeholder_stimulus", "asset_missing",
      "unsupported_task",     "schema",           "duplicate_id",
      "degenerate_baseline",  "insufficient_samples", "auth",
      "rate_limited",         "timeout",          "transport",
      "bad_request",          "malformed_payload", "unsupported_provider",
      "planning",             "dimension_mismatch", "out_of_range",
      "missing_attention",    "corrupt_bundle",   "io"};
  return names[static_cast<std::size_t>(kind)];
}

}  // namespace emostim
