#pragma once

#include <string>
#include <vector>

namespace motiondiff {

struct SuiteResult {
  std::string suite;
  std::string check;
  bool pass = false;
  std::string detail;
};

std::vector<SuiteResult> check_schedule();
std::vector<SuiteResult> check_guidance_identities();
// Five pinned targets, 10^4 draws each.
std::vector<SuiteResult> check_gaussian_recovery();
// Equal-variance experts at gamma 0, 0.25, 0.5, 1, 1.25.
std::vector<SuiteResult> check_poe();
// Mean displacement from the unconditional mean over gamma 0, 0.5, 1, 1.5, 2.
std::vector<SuiteResult> check_guidance_monotone();
// Training-loss gradients of a toy denoiser (T = 8, D = 3, two blocks) against
// central differences.
std::vector<SuiteResult> check_gradients();
std::vector<SuiteResult> check_equivariance();
std::vector<SuiteResult> check_lr_schedule();
std::vector<SuiteResult> check_style_dropout();
// BVH text, exp-map/matrix, MFCC against a plain DFT, checkpoint bytes.
std::vector<SuiteResult> check_round_trips();

std::vector<std::string> verify_suite_names();
// Throws ConfigError for an unknown selector.
std::vector<SuiteResult> cmd_verify(const std::string& selector);
// One "suite=.. check=.. pass=0|1 detail=.." line per check and a summary line.
std::string verify_report(const std::vector<SuiteResult>& results);

}  // namespace motiondiff
