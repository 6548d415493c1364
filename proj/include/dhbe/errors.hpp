#pragma once

#include <stdexcept>
#include <string>

namespace dhbe {

// Error taxonomy. Each family maps to a distinct CLI exit code so that
// scripted sweeps can tell a bad config from a diverged training run.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MeasurementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Contract violations (shape mismatches, out-of-bounds placements, ...).
// These indicate caller bugs rather than user input problems.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfig = 2;
inline constexpr int kIngestion = 3;
inline constexpr int kTraining = 4;
inline constexpr int kMeasurement = 5;
inline constexpr int kInternal = 10;
}  // namespace exit_code

}  // namespace dhbe
