#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace seqlab::acceptance {

struct Outcome {
  int criterion = 0;
  bool pass = false;
  std::string detail;
};

Outcome gradient_correctness();
Outcome shift_calibration();
Outcome partition_bound();
Outcome decoding_optimality();
Outcome metric_unit_values();

// Criteria 6, 7 and 8 share one set of trained models.
std::vector<Outcome> directional_reproduction(const std::filesystem::path& work_dir,
                                              std::ostream& log);

Outcome cli_reproducibility(const std::filesystem::path& cli, const std::filesystem::path& work_dir);

}  // namespace seqlab::acceptance
