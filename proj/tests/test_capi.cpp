#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "argus/argus.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out(s);
  argus_string_free(s);
  return out;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

argus_ctx* tiny_ctx() {
  argus_ctx* ctx = nullptr;
  REQUIRE(argus_ctx_new(&ctx) == ARGUS_OK);
  const char* overrides[] = {
      "d=16",           "heads=2",         "d_llm=32",       "lm_heads=2",
      "lm_enc_blocks=1", "lm_dec_blocks=1", "image_size=16",  "patch=8",
      "enc_blocks=1",   "point_tokens=16", "knn=4",          "qf_blocks=1",
      "qf3d_blocks=1",  "train_scenes=2",  "eval_scenes=1",  "n_views=2",
      "n_points=64",    "stage1_steps=4",  "stage2_steps=4", "stage3_steps=4",
      "batch_size=2",   "warmup_frac=0.25", "stub_steps=30", "stub_batch=4",
      "max_new_tokens=4", "seed=11",
  };
  for (const char* kv : overrides) REQUIRE(argus_ctx_set(ctx, kv) == ARGUS_OK);
  return ctx;
}

}  // namespace

TEST_CASE("version, status names and the usage split") {
  CHECK(std::string(argus_version()) == "0.1.0");

  CHECK(std::string(argus_status_name(ARGUS_OK)) == "ok");
  CHECK(std::string(argus_status_name(ARGUS_E_STAGE_ORDER)) == "stage_order");
  CHECK(std::string(argus_status_name(ARGUS_E_CHECKSUM)) == "checksum");
  CHECK(std::string(argus_status_name(ARGUS_E_INTERNAL)) == "internal");

  const argus_status usage[] = {
      ARGUS_E_INVALID_CONFIG, ARGUS_E_PLACEMENT,   ARGUS_E_DATASET_FORMAT,
      ARGUS_E_EMPTY_QA,       ARGUS_E_SHAPE,       ARGUS_E_UNDEFINED_LOSS,
      ARGUS_E_RANGE,          ARGUS_E_VOCAB,       ARGUS_E_EMPTY_INPUT,
      ARGUS_E_TRANSFER,       ARGUS_E_STAGE_ORDER,
  };
  for (argus_status s : usage) CHECK(argus_status_is_usage(s) == 1);
  const argus_status runtime[] = {
      ARGUS_OK,           ARGUS_E_GRAD,     ARGUS_E_NUMERIC,
      ARGUS_E_FREEZE_VIOLATION, ARGUS_E_CHECKSUM, ARGUS_E_IO,
      ARGUS_E_INTERNAL,
  };
  for (argus_status s : runtime) CHECK(argus_status_is_usage(s) == 0);
}

TEST_CASE("context overrides, config text and hashes") {
  argus_ctx* ctx = nullptr;
  REQUIRE(argus_ctx_new(&ctx) == ARGUS_OK);

  std::string hash0 = take([&] {
    char* s = nullptr;
    REQUIRE(argus_ctx_config_hash(ctx, &s) == ARGUS_OK);
    return s;
  }());

  REQUIRE(argus_ctx_set(ctx, "d=16") == ARGUS_OK);
  REQUIRE(argus_ctx_set(ctx, " heads = 2 ") == ARGUS_OK);

  std::string text = take([&] {
    char* s = nullptr;
    REQUIRE(argus_ctx_config(ctx, &s) == ARGUS_OK);
    return s;
  }());
  CHECK(text.find("d=16\n") != std::string::npos);
  CHECK(text.find("heads=2\n") != std::string::npos);

  std::string hash1 = take([&] {
    char* s = nullptr;
    REQUIRE(argus_ctx_config_hash(ctx, &s) == ARGUS_OK);
    return s;
  }());
  CHECK(hash0 != hash1);
  CHECK(hash1.size() == 16);

  CHECK(argus_ctx_set(ctx, "no_such_knob=1") == ARGUS_E_INVALID_CONFIG);
  CHECK(std::string(argus_last_error()).find("no_such_knob") !=
        std::string::npos);
  CHECK(argus_ctx_set(ctx, "d=banana") == ARGUS_E_INVALID_CONFIG);
  CHECK(argus_ctx_set(ctx, "just-a-word") == ARGUS_E_INVALID_CONFIG);
  CHECK(argus_ctx_set(ctx, nullptr) == ARGUS_E_INVALID_CONFIG);
  CHECK(argus_ctx_set(nullptr, "d=16") == ARGUS_E_INVALID_CONFIG);

  argus_ctx_free(ctx);
  argus_ctx_free(nullptr);
}

TEST_CASE("config files round trip through the context") {
  fs::path dir = fs::temp_directory_path() / "argus_capi_cfg";
  fs::create_directories(dir);

  argus_ctx* a = tiny_ctx();
  char* text = nullptr;
  REQUIRE(argus_ctx_config(a, &text) == ARGUS_OK);
  {
    std::ofstream out(dir / "run.cfg", std::ios::trunc);
    out << text;
  }
  std::string want(text);
  argus_string_free(text);

  argus_ctx* b = nullptr;
  REQUIRE(argus_ctx_new(&b) == ARGUS_OK);
  REQUIRE(argus_ctx_load_config(b, (dir / "run.cfg").string().c_str()) ==
          ARGUS_OK);
  char* got = nullptr;
  REQUIRE(argus_ctx_config(b, &got) == ARGUS_OK);
  CHECK(want == take(got));

  CHECK(argus_ctx_load_config(b, (dir / "absent.cfg").string().c_str()) ==
        ARGUS_E_IO);
  CHECK(std::string(argus_last_error()).find("absent.cfg") !=
        std::string::npos);

  argus_ctx_free(a);
  argus_ctx_free(b);
}

TEST_CASE("the c api drives data, training, eval and reporting end to end") {
  fs::path root = fs::temp_directory_path() / "argus_capi_run";
  fs::remove_all(root);
  fs::create_directories(root);
  fs::path data = root / "data";

  argus_ctx* ctx = tiny_ctx();

  REQUIRE(argus_gen_data(ctx, data.string().c_str(), 0, 1) == ARGUS_OK);
  nlohmann::json man = nlohmann::json::parse(slurp(data / "manifest.json"));
  CHECK(man.at("splits").at("train").size() == 2);
  CHECK(man.at("splits").at("val").size() == 1);
  CHECK(man.at("splits").at("test").size() == 0);

  fs::path ckpt0 = root / "stub.ckpt";
  REQUIRE(argus_pretrain_llm(ctx, data.string().c_str(),
                             ckpt0.string().c_str()) == ARGUS_OK);
  CHECK(fs::exists(ckpt0));

  // stage 2 straight from the stub has to be refused
  fs::path ckpt_bad = root / "bad.ckpt";
  CHECK(argus_train_stage(ctx, data.string().c_str(), 2,
                          ckpt0.string().c_str(), ckpt_bad.string().c_str(),
                          nullptr) == ARGUS_E_STAGE_ORDER);
  CHECK(argus_status_is_usage(ARGUS_E_STAGE_ORDER) == 1);

  fs::path prev = ckpt0;
  for (int stage = 1; stage <= 3; ++stage) {
    fs::path next = root / ("stage" + std::to_string(stage) + ".ckpt");
    fs::path rec = root / ("stage" + std::to_string(stage) + ".jsonl");
    REQUIRE(argus_train_stage(ctx, data.string().c_str(), stage,
                              prev.string().c_str(), next.string().c_str(),
                              rec.string().c_str()) == ARGUS_OK);
    std::string lines = slurp(rec);
    nlohmann::json head =
        nlohmann::json::parse(lines.substr(0, lines.find('\n')));
    CHECK(head.at("stage").get<int>() == stage);
    CHECK(head.at("steps").get<int>() == 4);
    prev = next;
  }

  fs::path metrics = root / "metrics.json";
  REQUIRE(argus_eval(ctx, data.string().c_str(), prev.string().c_str(), "full",
                     metrics.string().c_str()) == ARGUS_OK);
  nlohmann::json m = nlohmann::json::parse(slurp(metrics));
  for (const char* key : {"em", "bleu1", "bleu4", "rouge_l", "cider",
                          "em_degraded", "em_spatial", "n_items"})
    CHECK(m.contains(key));
  CHECK(m.at("n_items").get<int>() > 0);

  // same checkpoint, same split: byte-identical metrics
  fs::path metrics2 = root / "metrics2.json";
  REQUIRE(argus_eval(ctx, data.string().c_str(), prev.string().c_str(), "full",
                     metrics2.string().c_str()) == ARGUS_OK);
  CHECK(slurp(metrics) == slurp(metrics2));

  CHECK(argus_eval(ctx, data.string().c_str(), prev.string().c_str(),
                   "sideways", metrics.string().c_str()) ==
        ARGUS_E_INVALID_CONFIG);

  char* md = nullptr;
  REQUIRE(argus_report(metrics2.string().c_str(), &md) == ARGUS_OK);
  std::string table = take(md);
  CHECK(table.find("| EM | Bleu-1 | Bleu-4 | Rouge-L | CIDEr |") !=
        std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);

  CHECK(argus_report((root / "absent.json").string().c_str(), &md) ==
        ARGUS_E_IO);
  {
    std::ofstream out(root / "broken.json", std::ios::trunc);
    out << "{\"em\": 50.0}";
  }
  CHECK(argus_report((root / "broken.json").string().c_str(), &md) ==
        ARGUS_E_DATASET_FORMAT);

  // flip one byte near the end of the checkpoint: the loader has to notice
  fs::path mangled = root / "mangled.ckpt";
  std::string bytes = slurp(prev);
  bytes[bytes.size() - 64] ^= 0x40;
  {
    std::ofstream out(mangled, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK(argus_eval(ctx, data.string().c_str(), mangled.string().c_str(), "full",
                   metrics.string().c_str()) == ARGUS_E_CHECKSUM);
  CHECK(argus_status_is_usage(ARGUS_E_CHECKSUM) == 0);

  argus_ctx_free(ctx);
}

TEST_CASE("ablation output lands as a table and a metrics dump") {
  fs::path root = fs::temp_directory_path() / "argus_capi_ablate";
  fs::remove_all(root);
  fs::create_directories(root);
  fs::path data = root / "data";

  argus_ctx* ctx = tiny_ctx();
  REQUIRE(argus_gen_data(ctx, data.string().c_str(), 0, 1) == ARGUS_OK);

  fs::path out = root / "pose_axis";
  REQUIRE(argus_ablate(ctx, data.string().c_str(), "pose",
                       out.string().c_str()) == ARGUS_OK);

  std::string table = slurp(out / "table.md");
  CHECK(table.find("### pose") != std::string::npos);
  CHECK(table.find("\n| on |") != std::string::npos);
  CHECK(table.find("\n| off |") != std::string::npos);

  nlohmann::json doc = nlohmann::json::parse(slurp(out / "metrics.json"));
  CHECK(doc.at("axis").get<std::string>() == "pose");
  REQUIRE(doc.at("rows").size() == 2);
  for (const auto& row : doc.at("rows")) {
    CHECK(row.at("metrics").contains("em"));
    CHECK(std::isfinite(row.at("final_loss").get<double>()));
  }

  CHECK(argus_ablate(ctx, data.string().c_str(), "nonsense",
                     out.string().c_str()) == ARGUS_E_INVALID_CONFIG);

  argus_ctx_free(ctx);
}
