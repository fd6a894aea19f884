// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tts {

enum class ErrorCode {
    invalid_config,
    invalid_spec,
    provider_unreachable,
    provider_rejected,
    no_extractable_answers,
    scorer_missing,
    template_missing,
    llm_unavailable,
    duplicate_open,
    session_not_pending,
    index_out_of_range,
    indices_equal,
    not_found,
    corrupt_log,
    storage_io,
    instance_too_large,
    nondeterministic_backend,
    invalid_state,
};

std::string_view to_string(ErrorCode code);

/// Error carrying a machine-readable code. Thrown across module boundaries;
/// the service maps codes onto HTTP statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// Retryable provider failures (network blips, 5xx, 429).
    bool retryable() const noexcept { return code_ == ErrorCode::provider_unreachable; }

private:
    ErrorCode code_;
};

}  // namespace tts
