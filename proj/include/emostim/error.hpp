#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace emostim {

enum class ErrorKind {
  invalid_argument,
  not_found,
  wrong_modality,
  wrong_polarity,
  placeholder_stimulus,
  asset_missing,
  unsupported_task,
  schema,
  duplicate_id,
  degenerate_baseline,
  insufficient_samples,
  auth,
  rate_limited,
  timeout,
  transport,
  bad_request,
  malformed_payload,
  unsupported_provider,
  planning,
  dimension_mismatch,
  out_of_range,
  missing_attention,
  corrupt_bundle,
  io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace emostim
