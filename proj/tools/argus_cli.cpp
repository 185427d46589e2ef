// command line front end; links the C API only
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "argus/argus.h"

namespace {

namespace fs = std::filesystem;

// relative output paths land under ARGUS_RUN_ROOT when it is set
std::string out_path(const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  const char* root = std::getenv("ARGUS_RUN_ROOT");
  if (!root || !*root) return p;
  return (fs::path(root) / p).string();
}

int fail(argus_status s) {
  std::fprintf(stderr, "error (%s): %s\n", argus_status_name(s),
               argus_last_error());
  return argus_status_is_usage(s) ? 1 : 2;
}

// every artifact gets the config that produced it dropped next to it
int dump_config(argus_ctx* ctx, const std::string& artifact, bool is_dir) {
  char* text = nullptr;
  argus_status s = argus_ctx_config(ctx, &text);
  if (s != ARGUS_OK) return fail(s);
  fs::path target = is_dir ? fs::path(artifact) / "config.txt"
                           : fs::path(artifact).concat(".config.txt");
  std::ofstream out(target, std::ios::trunc);
  out << text;
  argus_string_free(text);
  if (!out) {
    std::fprintf(stderr, "error (io): cannot write %s\n",
                 target.string().c_str());
    return 2;
  }
  return 0;
}

struct CtxGuard {
  argus_ctx* ctx = nullptr;
  ~CtxGuard() { argus_ctx_free(ctx); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiview scene understanding workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", argus_version());

  std::string config_file;
  std::vector<std::string> sets;
  long long seed = -1;
  bool seed_given = false;
  app.add_option("--config", config_file, "config file applied over defaults");
  app.add_option("--set", sets, "override config key=value (repeatable)")
      ->allow_extra_args(false);
  app.add_option("--seed", seed, "shorthand for --set seed=N")
      ->each([&](const std::string&) { seed_given = true; });

  std::string data_dir, out, ckpt_in, ckpt_out, record, mode = "full";
  std::string axis, metrics_file;
  int scenes = 0, workers = 1, stage = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--scenes", scenes, "scene count (0 takes it from config)");
  gen->add_option("--workers", workers, "parallel scene writers");
  gen->add_option("--out", out, "dataset directory")->required();

  CLI::App* pre = app.add_subcommand("pretrain-llm", "train the text stub");
  pre->add_option("--data", data_dir, "dataset directory")->required();
  pre->add_option("--out", ckpt_out, "checkpoint to write")->required();

  CLI::App* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", stage, "stage number")
      ->required()
      ->check(CLI::Range(1, 3));
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--ckpt-in", ckpt_in, "checkpoint to start from")
      ->required();
  train->add_option("--ckpt-out", ckpt_out, "checkpoint to write")->required();
  train->add_option("--record", record, "write per-step jsonl here");

  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on the val split");
  ev->add_option("--mode", mode, "scene mode")
      ->check(CLI::IsMember({"full", "views_only", "points_only"}));
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--ckpt", ckpt_in, "checkpoint to score")->required();
  ev->add_option("--out", out, "metrics json to write")->required();

  CLI::App* abl = app.add_subcommand("ablate", "sweep one axis and tabulate");
  abl->add_option("--axis", axis, "axis to sweep")
      ->required()
      ->check(CLI::IsMember(
          {"mode", "n_views", "aggregator", "pose", "init", "stages"}));
  abl->add_option("--data", data_dir, "dataset directory")->required();
  abl->add_option("--out", out, "directory for table.md and metrics.json")
      ->required();

  CLI::App* rep = app.add_subcommand("report", "print a metrics file as markdown");
  rep->add_option("--metrics", metrics_file, "metrics json to read")
      ->required();

  // global --config/--set/--seed may trail the subcommand
  for (CLI::App* sub : {gen, pre, train, ev, abl, rep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CtxGuard g;
  argus_status s = argus_ctx_new(&g.ctx);
  if (s != ARGUS_OK) return fail(s);
  if (!config_file.empty()) {
    s = argus_ctx_load_config(g.ctx, config_file.c_str());
    if (s != ARGUS_OK) return fail(s);
  }
  for (const std::string& kv : sets) {
    s = argus_ctx_set(g.ctx, kv.c_str());
    if (s != ARGUS_OK) return fail(s);
  }
  if (seed_given) {
    s = argus_ctx_set(g.ctx, ("seed=" + std::to_string(seed)).c_str());
    if (s != ARGUS_OK) return fail(s);
  }

  if (gen->parsed()) {
    std::string dir = out_path(out);
    s = argus_gen_data(g.ctx, dir.c_str(), scenes, workers);
    if (s != ARGUS_OK) return fail(s);
    return dump_config(g.ctx, dir, true);
  }
  if (pre->parsed()) {
    std::string ckpt = out_path(ckpt_out);
    s = argus_pretrain_llm(g.ctx, data_dir.c_str(), ckpt.c_str());
    if (s != ARGUS_OK) return fail(s);
    return dump_config(g.ctx, ckpt, false);
  }
  if (train->parsed()) {
    std::string ckpt = out_path(ckpt_out);
    std::string rec = out_path(record);
    s = argus_train_stage(g.ctx, data_dir.c_str(), stage, ckpt_in.c_str(),
                          ckpt.c_str(), rec.empty() ? nullptr : rec.c_str());
    if (s != ARGUS_OK) return fail(s);
    return dump_config(g.ctx, ckpt, false);
  }
  if (ev->parsed()) {
    std::string file = out_path(out);
    s = argus_eval(g.ctx, data_dir.c_str(), ckpt_in.c_str(), mode.c_str(),
                   file.c_str());
    if (s != ARGUS_OK) return fail(s);
    return dump_config(g.ctx, file, false);
  }
  if (abl->parsed()) {
    std::string dir = out_path(out);
    s = argus_ablate(g.ctx, data_dir.c_str(), axis.c_str(), dir.c_str());
    if (s != ARGUS_OK) return fail(s);
    return dump_config(g.ctx, dir, true);
  }
  if (rep->parsed()) {
    char* md = nullptr;
    s = argus_report(metrics_file.c_str(), &md);
    if (s != ARGUS_OK) return fail(s);
    std::fputs(md, stdout);
    argus_string_free(md);
    return 0;
  }
  return 1;
}
