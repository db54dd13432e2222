#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <set>
#include <vector>

#include "acceptance.hpp"

int main(int argc, char** argv) {
  using namespace seqlab::acceptance;
  CLI::App app{"Acceptance criteria 1-9; prints one PASS/FAIL line per criterion"};
  std::filesystem::path work_dir = "acceptance_work";
  std::filesystem::path cli = SEQLAB_CLI_PATH;
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Directory for runs and histogram CSVs")
      ->capture_default_str();
  app.add_option("--cli", cli, "seqlab executable for the rerun check")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int c) { return selected.empty() || selected.count(c) != 0; };
  std::filesystem::create_directories(work_dir);

  bool all_pass = true;
  auto report = [&](const Outcome& o) {
    all_pass = all_pass && o.pass;
    std::cout << "Criterion " << o.criterion << ": " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  };
  if (wanted(1)) report(gradient_correctness());
  if (wanted(2)) report(shift_calibration());
  if (wanted(3)) report(partition_bound());
  if (wanted(4)) report(decoding_optimality());
  if (wanted(5)) report(metric_unit_values());
  if (wanted(6) || wanted(7) || wanted(8)) {
    for (const Outcome& o : directional_reproduction(work_dir, std::cerr)) {
      if (wanted(o.criterion)) report(o);
    }
  }
  if (wanted(9)) report(cli_reproducibility(cli, work_dir));
  return all_pass ? 0 : 1;
}
