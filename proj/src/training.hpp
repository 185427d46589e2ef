#pragma once

// Three-stage training on top of the frozen stub: stage 1 trains the 3d-aware
// query former against frozen fusion features, stage 2 unfreezes fusion, and
// stage 3 fine-tunes both on QA items with the lower schedule floor. The LLM
// stays frozen throughout; every stage records fingerprints of its frozen
// parameter subsets and fails loudly if one drifts.

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "encoders.hpp"
#include "fusion.hpp"
#include "llm.hpp"
#include "metrics.hpp"
#include "qformer3d.hpp"

namespace argus {

struct RunConfig {
  // model dims
  int d = 64;
  int heads = 4;
  int d_llm = 128;
  int lm_heads = 4;
  int lm_enc_blocks = 2;
  int lm_dec_blocks = 2;
  int image_size = 64;
  int patch = 8;
  int enc_blocks = 2;
  int point_tokens = 256;
  int knn = 8;
  int qf_blocks = 2;
  int qf3d_blocks = 2;
  // data
  int train_scenes = 200;
  int eval_scenes = 50;
  int n_views = 16;
  int n_points = 2048;
  double void_prob = 0.5;
  double jitter_sigma = 0.02;
  bool use_clean_cloud = false;
  // training
  int stage1_steps = 2000;
  int stage2_steps = 3000;
  int stage3_steps = 2000;
  int batch_size = 64;
  double warmup_frac = 0.1;
  int stub_steps = 1500;
  int stub_batch = 16;
  int max_text_len = 24;
  int max_new_tokens = 8;
  uint64_t seed = 1;
  // wiring toggles
  bool freeze_encoders = true;
  bool with_pose = true;
  bool init_transfer = true;
  Aggregator aggregator = Aggregator::attention;
  SceneMode mode = SceneMode::full;
};

Aggregator aggregator_from_name(const std::string& name);
SceneMode scene_mode_from_name(const std::string& name);

void validate(const RunConfig& rc);
std::string serialize_run_config(const RunConfig& rc);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& file);
// Applies "key=value" overrides on top of an existing config.
void apply_overrides(RunConfig& rc,
                     const std::vector<std::string>& key_values);
std::string config_hash(const RunConfig& rc);

struct ModelCfgs {
  ImageEncoderCfg icfg;
  PointEncoderCfg pcfg;
  FusionCfg fcfg;
  QFormer3DCfg qcfg;
  LmCfg lcfg;
};
ModelCfgs model_cfgs(const RunConfig& rc, int vocab_size);

struct TrainState {
  ParameterStore<float> params;
  OptimizerState<float> opt;
  int stage_done = -1;  // -1 nothing, 0 stub frozen, then 1..3
  std::string config_hash;
};

// stage k may start only on the completed stage k-1.
void require_stage(const TrainState& st, int next_stage);
// Marks a stage as intentionally not run (stage-subset ablations).
void skip_stage(TrainState& st, int stage);

std::vector<StubPair> stub_corpus(const std::vector<SceneSample>& scenes);
std::vector<double> pretrain_stage0(TrainState& st, const Vocab& v,
                                    const std::vector<SceneSample>& train,
                                    const RunConfig& rc);
void init_model(TrainState& st, const Vocab& v, const RunConfig& rc);

struct StageConfig {
  int stage = 1;
  int steps = 0;
  int batch = 1;
  LrSchedule schedule;
  std::set<std::string> freeze;
  std::set<Task> tasks;
  uint64_t seed = 0;
};
StageConfig stage_config(const RunConfig& rc, int stage);

struct TrainItem {
  int scene = 0;
  int qa = 0;
  Task task = Task::count;
  bool targets_degraded = false;
  std::vector<int> instr_ids;
  std::vector<int> answer_ids;
  std::string answer;
};
std::vector<TrainItem> build_items(const std::vector<SceneSample>& scenes,
                                   const Vocab& v,
                                   const std::set<Task>& tasks, int max_len);

// Value caches for modules that stay frozen; each level is consulted only
// when every parameter feeding it is frozen in the running stage.
struct FeatureCache {
  std::map<std::pair<int, int>, Mat<float>> image_tokens;  // (scene, view)
  std::map<int, Mat<float>> point_tokens;                  // scene
  std::map<std::pair<int, int>, Mat<float>> vas;           // (scene, qa)
};

struct RunRecord {
  int stage = 0;
  std::string config_hash;
  std::vector<double> loss;
  std::vector<double> lr;
  double lr_end = 0.0;
  std::map<std::string, uint64_t> frozen_start, frozen_end;
  uint64_t lm_start = 0, lm_end = 0;
};
std::string record_jsonl(const RunRecord& rec);

RunRecord run_stage(TrainState& st, const StageConfig& sc,
                    const std::vector<SceneSample>& train, const Vocab& v,
                    const RunConfig& rc, FeatureCache* cache = nullptr,
                    const std::function<void(TrainState&)>& test_hook = {});

struct EvalResult {
  MetricReport report;
  double em_degraded = 0.0;
  int n_degraded = 0;
  double em_spatial = 0.0;
  int n_spatial = 0;
  int n_items = 0;
  std::vector<EvalPair> pairs;
};
EvalResult aggregate_eval(const std::vector<EvalPair>& pairs,
                          const std::vector<char>& degraded,
                          const std::vector<char>& spatial);
EvalResult evaluate(TrainState& st, const std::vector<SceneSample>& split,
                    SceneMode mode, const Vocab& v, const RunConfig& rc,
                    FeatureCache* cache = nullptr);
std::string eval_metrics_json(const EvalResult& r);

void save_checkpoint(const std::filesystem::path& file, const TrainState& st);
TrainState load_checkpoint(const std::filesystem::path& file);

struct PipelineResult {
  std::vector<RunRecord> records;
  EvalResult eval;
};
// Runs the listed stages in order (each entry 1..3) and evaluates at the end.
PipelineResult run_pipeline(TrainState& st, const RunConfig& rc,
                            const std::vector<SceneSample>& train,
                            const std::vector<SceneSample>& eval_split,
                            const Vocab& v,
                            const std::vector<int>& stages = {1, 2, 3});

enum class AblationAxis { mode, n_views, aggregator, pose, init, stages };
const char* axis_name(AblationAxis a);
AblationAxis axis_from_name(const std::string& s);

struct AblationRow {
  std::string setting;
  double final_loss = 0.0;
  EvalResult eval;
};
struct AblationTable {
  AblationAxis axis = AblationAxis::mode;
  std::vector<AblationRow> rows;
};
std::string ablation_markdown(const AblationTable& t);
// Every row restarts from a copy of the given stage-0 state under the same
// seed, so settings differ in nothing but the axis value.
AblationTable run_ablation(AblationAxis axis, const RunConfig& base,
                           const TrainState& stage0,
                           const std::vector<SceneSample>& train,
                           const std::vector<SceneSample>& eval_split,
                           const Vocab& v);

struct CompensationResult {
  EvalResult full;
  EvalResult points_only;
  double degraded_gap = 0.0;  // full minus points_only on degraded questions
  double overall_gap = 0.0;
};
CompensationResult run_compensation(const RunConfig& rc,
                                    const std::vector<SceneSample>& train,
                                    const std::vector<SceneSample>& eval_split,
                                    const Vocab& v);

}  // namespace argus
