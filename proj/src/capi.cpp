#include "argus/argus.h"

#include <cstdlib>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dataset.hpp"
#include "training.hpp"
#include "version.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

argus_status map_code(argus::ErrCode c) {
  switch (c) {
    case argus::ErrCode::Ok: return ARGUS_OK;
    case argus::ErrCode::InvalidConfig: return ARGUS_E_INVALID_CONFIG;
    case argus::ErrCode::Placement: return ARGUS_E_PLACEMENT;
    case argus::ErrCode::DatasetFormat: return ARGUS_E_DATASET_FORMAT;
    case argus::ErrCode::EmptyQA: return ARGUS_E_EMPTY_QA;
    case argus::ErrCode::Shape: return ARGUS_E_SHAPE;
    case argus::ErrCode::UndefinedLoss: return ARGUS_E_UNDEFINED_LOSS;
    case argus::ErrCode::Grad: return ARGUS_E_GRAD;
    case argus::ErrCode::Range: return ARGUS_E_RANGE;
    case argus::ErrCode::Numeric: return ARGUS_E_NUMERIC;
    case argus::ErrCode::Vocab: return ARGUS_E_VOCAB;
    case argus::ErrCode::EmptyInput: return ARGUS_E_EMPTY_INPUT;
    case argus::ErrCode::Transfer: return ARGUS_E_TRANSFER;
    case argus::ErrCode::FreezeViolation: return ARGUS_E_FREEZE_VIOLATION;
    case argus::ErrCode::Checksum: return ARGUS_E_CHECKSUM;
    case argus::ErrCode::StageOrder: return ARGUS_E_STAGE_ORDER;
    case argus::ErrCode::Io: return ARGUS_E_IO;
    case argus::ErrCode::Internal: return ARGUS_E_INTERNAL;
  }
  return ARGUS_E_INTERNAL;
}

template <typename F>
argus_status guard(F&& f) {
  try {
    f();
    return ARGUS_OK;
  } catch (const argus::ArgusError& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return ARGUS_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ARGUS_E_INTERNAL;
  }
}

argus_status need(const void* p, const char* what) {
  g_last_error = std::string("null argument: ") + what;
  (void)p;
  return ARGUS_E_INVALID_CONFIG;
}

#define ARGUS_REQUIRE(p) \
  do {                   \
    if (!(p)) return need(p, #p); \
  } while (0)

struct Splits {
  std::vector<argus::SceneSample> train;
  std::vector<argus::SceneSample> eval;
};

Splits load_splits(const char* data_dir) {
  argus::DatasetManifest man = argus::read_manifest(data_dir);
  std::vector<argus::SceneSample> all = argus::read_dataset(data_dir);
  Splits out;
  for (int i : man.train_idx) out.train.push_back(all[static_cast<size_t>(i)]);
  for (int i : man.val_idx) out.eval.push_back(all[static_cast<size_t>(i)]);
  if (out.train.empty())
    throw argus::EmptyInputError("dataset has an empty train split");
  if (out.eval.empty())
    throw argus::EmptyInputError("dataset has an empty val split");
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw argus::IoError("cannot open " + file.string());
  out << text;
  out.close();
  if (!out) throw argus::IoError("write failed for " + file.string());
}

}  // namespace

struct argus_ctx {
  argus::RunConfig rc;
  argus::Vocab vocab = argus::build_vocab(argus::canonical_corpus());
};

extern "C" {

const char* argus_version(void) { return argus::version(); }

const char* argus_status_name(argus_status s) {
  switch (s) {
    case ARGUS_OK: return "ok";
    case ARGUS_E_INVALID_CONFIG: return "invalid_config";
    case ARGUS_E_PLACEMENT: return "placement";
    case ARGUS_E_DATASET_FORMAT: return "dataset_format";
    case ARGUS_E_EMPTY_QA: return "empty_qa";
    case ARGUS_E_SHAPE: return "shape";
    case ARGUS_E_UNDEFINED_LOSS: return "undefined_loss";
    case ARGUS_E_GRAD: return "grad";
    case ARGUS_E_RANGE: return "range";
    case ARGUS_E_NUMERIC: return "numeric";
    case ARGUS_E_VOCAB: return "vocab";
    case ARGUS_E_EMPTY_INPUT: return "empty_input";
    case ARGUS_E_TRANSFER: return "transfer";
    case ARGUS_E_FREEZE_VIOLATION: return "freeze_violation";
    case ARGUS_E_CHECKSUM: return "checksum";
    case ARGUS_E_STAGE_ORDER: return "stage_order";
    case ARGUS_E_IO: return "io";
    case ARGUS_E_INTERNAL: return "internal";
  }
  return "unknown";
}

int argus_status_is_usage(argus_status s) {
  switch (s) {
    case ARGUS_E_INVALID_CONFIG:
    case ARGUS_E_PLACEMENT:
    case ARGUS_E_DATASET_FORMAT:
    case ARGUS_E_EMPTY_QA:
    case ARGUS_E_SHAPE:
    case ARGUS_E_UNDEFINED_LOSS:
    case ARGUS_E_RANGE:
    case ARGUS_E_VOCAB:
    case ARGUS_E_EMPTY_INPUT:
    case ARGUS_E_TRANSFER:
    case ARGUS_E_STAGE_ORDER:
      return 1;
    default:
      return 0;
  }
}

const char* argus_last_error(void) { return g_last_error.c_str(); }

void argus_string_free(char* s) { std::free(s); }

argus_status argus_ctx_new(argus_ctx** out) {
  ARGUS_REQUIRE(out);
  return guard([&] { *out = new argus_ctx(); });
}

void argus_ctx_free(argus_ctx* ctx) { delete ctx; }

argus_status argus_ctx_load_config(argus_ctx* ctx, const char* path) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(path);
  return guard([&] { ctx->rc = argus::load_run_config(path); });
}

argus_status argus_ctx_set(argus_ctx* ctx, const char* key_value) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(key_value);
  return guard([&] { argus::apply_overrides(ctx->rc, {key_value}); });
}

argus_status argus_ctx_config(argus_ctx* ctx, char** out_text) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(out_text);
  return guard([&] {
    *out_text = dup_string(argus::serialize_run_config(ctx->rc));
    if (!*out_text) throw std::bad_alloc();
  });
}

argus_status argus_ctx_config_hash(argus_ctx* ctx, char** out_hex) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(out_hex);
  return guard([&] {
    *out_hex = dup_string(argus::config_hash(ctx->rc));
    if (!*out_hex) throw std::bad_alloc();
  });
}

argus_status argus_gen_data(argus_ctx* ctx, const char* out_dir, int scenes,
                            int workers) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(out_dir);
  return guard([&] {
    const argus::RunConfig& rc = ctx->rc;
    argus::validate(rc);
    argus::GenParams p;
    p.sample.n_points = rc.n_points;
    p.sample.n_views = rc.n_views;
    p.sample.image_size = rc.image_size;
    p.sample.void_prob = rc.void_prob;
    p.sample.jitter_sigma = rc.jitter_sigma;
    if (scenes > 0) {
      p.n_scenes = scenes;
    } else {
      p.n_scenes = rc.train_scenes + rc.eval_scenes;
      // the generator floors val_frac * n_scenes, so aim at the middle of
      // the interval that floors to exactly eval_scenes
      p.val_frac = (rc.eval_scenes + 0.5) / static_cast<double>(p.n_scenes);
      p.test_frac = 0.0;
    }
    p.workers = workers > 0 ? workers : 1;
    argus::generate_dataset(out_dir, p, rc.seed);
  });
}

argus_status argus_pretrain_llm(argus_ctx* ctx, const char* data_dir,
                                const char* ckpt_out) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(data_dir);
  ARGUS_REQUIRE(ckpt_out);
  return guard([&] {
    Splits sp = load_splits(data_dir);
    argus::TrainState st;
    argus::pretrain_stage0(st, ctx->vocab, sp.train, ctx->rc);
    argus::save_checkpoint(ckpt_out, st);
  });
}

argus_status argus_train_stage(argus_ctx* ctx, const char* data_dir, int stage,
                               const char* ckpt_in, const char* ckpt_out,
                               const char* record_out) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(data_dir);
  ARGUS_REQUIRE(ckpt_in);
  ARGUS_REQUIRE(ckpt_out);
  return guard([&] {
    Splits sp = load_splits(data_dir);
    argus::TrainState st = argus::load_checkpoint(ckpt_in);
    if (stage == 1 && !st.params.has("qf3d.query"))
      argus::init_model(st, ctx->vocab, ctx->rc);
    argus::FeatureCache cache;
    argus::RunRecord rec =
        argus::run_stage(st, argus::stage_config(ctx->rc, stage), sp.train,
                         ctx->vocab, ctx->rc, &cache);
    argus::save_checkpoint(ckpt_out, st);
    if (record_out) write_text(record_out, argus::record_jsonl(rec));
  });
}

argus_status argus_eval(argus_ctx* ctx, const char* data_dir, const char* ckpt,
                        const char* mode, const char* metrics_out) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(data_dir);
  ARGUS_REQUIRE(ckpt);
  ARGUS_REQUIRE(mode);
  ARGUS_REQUIRE(metrics_out);
  return guard([&] {
    Splits sp = load_splits(data_dir);
    argus::TrainState st = argus::load_checkpoint(ckpt);
    argus::EvalResult r = argus::evaluate(
        st, sp.eval, argus::scene_mode_from_name(mode), ctx->vocab, ctx->rc);
    write_text(metrics_out, argus::eval_metrics_json(r) + "\n");
  });
}

argus_status argus_ablate(argus_ctx* ctx, const char* data_dir,
                          const char* axis, const char* out_dir) {
  ARGUS_REQUIRE(ctx);
  ARGUS_REQUIRE(data_dir);
  ARGUS_REQUIRE(axis);
  ARGUS_REQUIRE(out_dir);
  return guard([&] {
    argus::AblationAxis ax = argus::axis_from_name(axis);
    Splits sp = load_splits(data_dir);
    argus::TrainState stage0;
    argus::pretrain_stage0(stage0, ctx->vocab, sp.train, ctx->rc);
    argus::AblationTable table =
        argus::run_ablation(ax, ctx->rc, stage0, sp.train, sp.eval, ctx->vocab);
    std::filesystem::create_directories(out_dir);
    std::filesystem::path dir(out_dir);
    write_text(dir / "table.md", argus::ablation_markdown(table));
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const argus::AblationRow& r : table.rows) {
      nlohmann::ordered_json e;
      e["setting"] = r.setting;
      e["final_loss"] = r.final_loss;
      e["metrics"] = nlohmann::ordered_json::parse(argus::eval_metrics_json(r.eval));
      rows.push_back(std::move(e));
    }
    nlohmann::ordered_json doc;
    doc["axis"] = argus::axis_name(ax);
    doc["config_hash"] = argus::config_hash(ctx->rc);
    doc["rows"] = std::move(rows);
    write_text(dir / "metrics.json", doc.dump(2) + "\n");
  });
}

argus_status argus_report(const char* metrics_json, char** out_markdown) {
  ARGUS_REQUIRE(metrics_json);
  ARGUS_REQUIRE(out_markdown);
  return guard([&] {
    std::ifstream in(metrics_json);
    if (!in) throw argus::IoError(std::string("cannot open ") + metrics_json);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw argus::DatasetFormatError(std::string("bad metrics json: ") + e.what());
    }
    argus::MetricReport r;
    try {
      r.em = j.at("em").get<double>();
      r.bleu1 = j.at("bleu1").get<double>();
      r.bleu2 = j.at("bleu2").get<double>();
      r.bleu3 = j.at("bleu3").get<double>();
      r.bleu4 = j.at("bleu4").get<double>();
      r.rouge_l = j.at("rouge_l").get<double>();
      r.cider = j.at("cider").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw argus::DatasetFormatError(std::string("bad metrics json: ") + e.what());
    }
    *out_markdown = dup_string(argus::metrics_markdown(r));
    if (!*out_markdown) throw std::bad_alloc();
  });
}

}  // extern "C"
