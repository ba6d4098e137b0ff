// Command-line entry point: generate / train / eval / analyze.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "traj/commands.hpp"

namespace {

void mark_failed(const std::string& out_dir, const std::string& message) {
  if (out_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream marker(out_dir + "/FAILED", std::ios::trunc);
  marker << message << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenario-adaptive trajectory refinement"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "run config JSON (defaults used when omitted)");
  app.add_option("--set", overrides, "override config values, e.g. --set refine.beta=0.8");

  auto* gen = app.add_subcommand("generate", "generate a synthetic scenario dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output JSONL path")->required();

  auto* tr = app.add_subcommand("train", "train backbone, refiner and score decoder");
  std::string tr_data, tr_out, tr_resume;
  bool tr_freeze = false;
  int tr_jobs = 0;
  tr->add_option("--dataset", tr_data, "training dataset JSONL")->required();
  tr->add_option("--out", tr_out, "output directory for checkpoints and logs")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_flag("--freeze-backbone", tr_freeze, "do not update backbone parameters");
  tr->add_option("--jobs", tr_jobs, "worker count");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_mode, ev_radius, ev_encoding;
  int ev_jobs = 0, ev_iters = -1;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--dataset", ev_data, "evaluation dataset JSONL")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--mode", ev_mode, "fixed | adaptive");
  ev->add_option("--iterations", ev_iters, "refinement iterations for fixed mode");
  ev->add_option("--jobs", ev_jobs, "worker count");
  ev->add_option("--radius", ev_radius, "fixed:<meters> | adaptive:linear | adaptive:exp");
  ev->add_option("--encoding", ev_encoding, "anchor-centric | agent-centric");

  auto* an = app.add_subcommand("analyze", "score-distribution and ablation analysis");
  std::vector<std::string> an_dirs;
  std::string an_out;
  an->add_option("--eval-dir", an_dirs, "eval output directory (repeatable)")->required();
  an->add_option("--out", an_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  std::string out_dir_for_marker;
  try {
    if (tr->parsed() && tr_freeze) overrides.push_back("train.freeze_backbone=true");
    if (tr->parsed() && tr_jobs > 0) overrides.push_back("train.jobs=" + std::to_string(tr_jobs));
    if (ev->parsed()) {
      if (!ev_mode.empty()) overrides.push_back("eval.mode=" + ev_mode);
      if (ev_iters >= 0) overrides.push_back("eval.iterations=" + std::to_string(ev_iters));
      if (ev_jobs > 0) overrides.push_back("eval.jobs=" + std::to_string(ev_jobs));
      if (!ev_radius.empty()) overrides.push_back("refine.radius=" + ev_radius);
      if (!ev_encoding.empty()) overrides.push_back("refine.encoding=" + ev_encoding);
    }

    if (an->parsed()) {
      out_dir_for_marker = an_out;
      traj::cmd_analyze(an_dirs, an_out);
      return 0;
    }

    const traj::RunConfig cfg = config_path.empty()
                                    ? traj::parse_config_text("{}", overrides)
                                    : traj::load_config(config_path, overrides);
    if (gen->parsed()) {
      traj::cmd_generate(cfg, gen_out);
    } else if (tr->parsed()) {
      out_dir_for_marker = tr_out;
      traj::cmd_train(cfg, tr_data, tr_out, tr_resume);
    } else if (ev->parsed()) {
      out_dir_for_marker = ev_out;
      traj::cmd_eval(cfg, ev_ckpt, ev_data, ev_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    mark_failed(out_dir_for_marker, e.what());
    return 1;
  }
  return 0;
}
