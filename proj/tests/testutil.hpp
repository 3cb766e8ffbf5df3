#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "icca/icca.hpp"

namespace testutil {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("icca-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// A tiny hand-built interaction: four pixel-less images, fixed messages, all
// selections correct. Enough structure for record/metric tests that never
// render prompts.
inline icca::Interaction tiny_interaction(const std::string& id = "tiny") {
  icca::Interaction in;
  in.id = id;
  in.source = icca::Source::Simulated;
  in.variant = "L3";
  std::array<std::string, 4> ids = {"img-a", "img-b", "img-c", "img-d"};
  for (int k = 0; k < 4; ++k) {
    in.context[static_cast<std::size_t>(k)] = icca::ImageRef::from_id(ids[static_cast<std::size_t>(k)]);
  }
  for (int t = 1; t <= icca::kTrialsPerGame; ++t) {
    icca::TrialRecord r;
    r.trial_index = t;
    r.repetition = icca::repetition_of_trial(t);
    int slot = (t - 1) % 4;
    r.target_id = ids[static_cast<std::size_t>(slot)];
    icca::LabelAssignment identity;
    r.listener_view = icca::make_view(in.context, identity, t == 1);
    r.speaker_view = r.listener_view;
    r.gold_label = icca::kLabels[static_cast<std::size_t>(slot)];
    r.message = "message for " + ids[static_cast<std::size_t>(slot)];
    r.selection = r.gold_label;
    r.correct = true;
    r.feedback_text = icca::render_feedback(r.selection, r.gold_label, icca::Role::Listener);
    in.trials.push_back(std::move(r));
  }
  return in;
}

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr interleaved
};

// Runs the built CLI binary with `args`, capturing combined output.
inline CommandResult run_cli(const std::string& args, const std::filesystem::path& cwd = {}) {
  std::string cmd;
  if (!cwd.empty()) cmd += "cd " + cwd.string() + " && ";
  cmd += std::string(ICCA_BIN_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  CommandResult result;
  if (pipe == nullptr) return result;
  char buf[4096];
  std::size_t n = 0;
  while ((n = ::fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, n);
  int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

}  // namespace testutil
