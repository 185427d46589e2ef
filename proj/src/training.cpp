#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace argus {

// ---- run config -------------------------------------------------------------

Aggregator aggregator_from_name(const std::string& name) {
  if (name == "attention") return Aggregator::attention;
  if (name == "mean") return Aggregator::mean;
  if (name == "max") return Aggregator::max;
  throw InvalidConfig("unknown aggregator: " + name);
}

SceneMode scene_mode_from_name(const std::string& name) {
  if (name == "full") return SceneMode::full;
  if (name == "views_only") return SceneMode::views_only;
  if (name == "points_only") return SceneMode::points_only;
  throw InvalidConfig("unknown scene mode: " + name);
}

namespace {

// One call per field, declaration order. Serialization, parsing and the
// config hash all go through this single table.
template <typename F>
void visit_fields(RunConfig& c, F&& f) {
  f("d", c.d);
  f("heads", c.heads);
  f("d_llm", c.d_llm);
  f("lm_heads", c.lm_heads);
  f("lm_enc_blocks", c.lm_enc_blocks);
  f("lm_dec_blocks", c.lm_dec_blocks);
  f("image_size", c.image_size);
  f("patch", c.patch);
  f("enc_blocks", c.enc_blocks);
  f("point_tokens", c.point_tokens);
  f("knn", c.knn);
  f("qf_blocks", c.qf_blocks);
  f("qf3d_blocks", c.qf3d_blocks);
  f("train_scenes", c.train_scenes);
  f("eval_scenes", c.eval_scenes);
  f("n_views", c.n_views);
  f("n_points", c.n_points);
  f("void_prob", c.void_prob);
  f("jitter_sigma", c.jitter_sigma);
  f("use_clean_cloud", c.use_clean_cloud);
  f("stage1_steps", c.stage1_steps);
  f("stage2_steps", c.stage2_steps);
  f("stage3_steps", c.stage3_steps);
  f("batch_size", c.batch_size);
  f("warmup_frac", c.warmup_frac);
  f("stub_steps", c.stub_steps);
  f("stub_batch", c.stub_batch);
  f("max_text_len", c.max_text_len);
  f("max_new_tokens", c.max_new_tokens);
  f("seed", c.seed);
  f("freeze_encoders", c.freeze_encoders);
  f("with_pose", c.with_pose);
  f("init_transfer", c.init_transfer);
  f("aggregator", c.aggregator);
  f("mode", c.mode);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& val, const char* key) {
  size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(val, &pos);
  } catch (const std::exception&) {
    throw InvalidConfig(std::string("config: bad integer for ") + key + ": " + val);
  }
  if (pos != val.size())
    throw InvalidConfig(std::string("config: bad integer for ") + key + ": " + val);
  return out;
}

struct Printer {
  std::string out;
  void operator()(const char* k, int& v) { line(k, std::to_string(v)); }
  void operator()(const char* k, uint64_t& v) { line(k, std::to_string(v)); }
  void operator()(const char* k, double& v) { line(k, fmt_double(v)); }
  void operator()(const char* k, bool& v) { line(k, v ? "true" : "false"); }
  void operator()(const char* k, Aggregator& v) { line(k, aggregator_name(v)); }
  void operator()(const char* k, SceneMode& v) { line(k, scene_mode_name(v)); }
  void line(const char* k, const std::string& v) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
};

struct Setter {
  const std::string& key;
  const std::string& val;
  bool hit = false;

  void operator()(const char* k, int& v) {
    if (key != k) return;
    long long x = parse_ll(val, k);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw InvalidConfig(std::string("config: value out of range for ") + k);
    v = static_cast<int>(x);
    hit = true;
  }
  void operator()(const char* k, uint64_t& v) {
    if (key != k) return;
    long long x = parse_ll(val, k);
    if (x < 0) throw InvalidConfig(std::string("config: value out of range for ") + k);
    v = static_cast<uint64_t>(x);
    hit = true;
  }
  void operator()(const char* k, double& v) {
    if (key != k) return;
    size_t pos = 0;
    try {
      v = std::stod(val, &pos);
    } catch (const std::exception&) {
      throw InvalidConfig(std::string("config: bad number for ") + k + ": " + val);
    }
    if (pos != val.size())
      throw InvalidConfig(std::string("config: bad number for ") + k + ": " + val);
    hit = true;
  }
  void operator()(const char* k, bool& v) {
    if (key != k) return;
    if (val == "true" || val == "1")
      v = true;
    else if (val == "false" || val == "0")
      v = false;
    else
      throw InvalidConfig(std::string("config: bad boolean for ") + k + ": " + val);
    hit = true;
  }
  void operator()(const char* k, Aggregator& v) {
    if (key != k) return;
    v = aggregator_from_name(val);
    hit = true;
  }
  void operator()(const char* k, SceneMode& v) {
    if (key != k) return;
    v = scene_mode_from_name(val);
    hit = true;
  }
};

void set_field(RunConfig& rc, const std::string& key, const std::string& val) {
  Setter s{key, val};
  visit_fields(rc, s);
  if (!s.hit) throw InvalidConfig("config: unknown key: " + key);
}

int64_t warmup_steps_for(int steps, double frac) {
  return std::llround(static_cast<double>(steps) * frac);
}

}  // namespace

void validate(const RunConfig& rc) {
  auto req = [](bool ok, const char* what) {
    if (!ok) throw InvalidConfig(std::string("config: ") + what);
  };
  req(rc.d >= 1 && rc.heads >= 1 && rc.d % rc.heads == 0,
      "heads must divide d");
  req(rc.d_llm >= 1 && rc.lm_heads >= 1 && rc.d_llm % rc.lm_heads == 0,
      "lm_heads must divide d_llm");
  req(rc.lm_enc_blocks >= 1 && rc.lm_dec_blocks >= 1,
      "lm blocks must be positive");
  req(rc.image_size >= 1 && rc.patch >= 1 && rc.image_size % rc.patch == 0,
      "patch must divide image_size");
  req(rc.enc_blocks >= 1 && rc.qf_blocks >= 1 && rc.qf3d_blocks >= 1,
      "encoder and qformer blocks must be positive");
  req(rc.point_tokens >= 1 && rc.knn >= 1, "point encoder sizes must be positive");
  req(rc.train_scenes >= 1 && rc.eval_scenes >= 1, "scene counts must be positive");
  req(rc.n_views >= 1, "n_views must be positive");
  req(rc.n_points >= rc.point_tokens, "n_points must cover point_tokens");
  req(rc.void_prob >= 0.0 && rc.void_prob <= 1.0, "void_prob outside [0,1]");
  req(rc.jitter_sigma >= 0.0, "jitter_sigma must be nonnegative");
  req(rc.batch_size >= 1, "batch_size must be positive");
  req(rc.stub_steps >= 1 && rc.stub_batch >= 1, "stub schedule must be positive");
  req(rc.max_text_len >= 3, "max_text_len must fit bos + token + eos");
  req(rc.max_new_tokens >= 1, "max_new_tokens must be positive");
  req(rc.warmup_frac > 0.0 && rc.warmup_frac < 1.0, "warmup_frac outside (0,1)");
  for (int steps : {rc.stage1_steps, rc.stage2_steps, rc.stage3_steps}) {
    req(steps >= 2, "stage steps must be at least 2");
    int64_t warm = warmup_steps_for(steps, rc.warmup_frac);
    req(warm >= 1 && warm < steps, "warmup rounds to an empty or full stage");
  }
}

std::string serialize_run_config(const RunConfig& rc) {
  Printer p;
  visit_fields(const_cast<RunConfig&>(rc), p);
  return p.out;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("config: expected key=value, got: " + line);
    set_field(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("config: cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

void apply_overrides(RunConfig& rc, const std::vector<std::string>& key_values) {
  for (const std::string& kv : key_values) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("config: override must be key=value, got: " + kv);
    set_field(rc, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
}

std::string config_hash(const RunConfig& rc) {
  std::string s = serialize_run_config(rc);
  return hex64(fnv1a(s.data(), s.size()));
}

ModelCfgs model_cfgs(const RunConfig& rc, int vocab_size) {
  ModelCfgs m;
  m.icfg = ImageEncoderCfg{rc.image_size, rc.patch, rc.d, rc.heads, rc.enc_blocks};
  m.pcfg = PointEncoderCfg{rc.point_tokens, rc.knn, rc.d, rc.heads, rc.enc_blocks};
  m.fcfg = FusionCfg{rc.d, rc.heads, rc.qf_blocks};
  m.qcfg = QFormer3DCfg{rc.d, rc.heads, rc.qf3d_blocks, rc.d_llm};
  m.lcfg = LmCfg{vocab_size, rc.d_llm, rc.lm_heads, rc.lm_enc_blocks,
                 rc.lm_dec_blocks};
  return m;
}

// ---- stage bookkeeping ------------------------------------------------------

void require_stage(const TrainState& st, int next_stage) {
  if (next_stage < 1 || next_stage > 3)
    throw InvalidConfig("stage must be 1, 2 or 3");
  if (st.stage_done != next_stage - 1)
    throw StageOrderError("stage " + std::to_string(next_stage) +
                          " needs a completed stage " +
                          std::to_string(next_stage - 1) + ", state is at " +
                          std::to_string(st.stage_done));
}

void skip_stage(TrainState& st, int stage) {
  require_stage(st, stage);
  st.stage_done = stage;
}

std::vector<StubPair> stub_corpus(const std::vector<SceneSample>& scenes) {
  std::vector<StubPair> out;
  for (const SceneSample& s : scenes) {
    std::vector<std::string> words = describe_scene_tokens(s.scene);
    std::string desc;
    for (const std::string& w : words) {
      if (!desc.empty()) desc += ' ';
      desc += w;
    }
    for (const QAItem& qa : s.qa)
      out.push_back(StubPair{desc + ' ' + qa.question, qa.answer});
  }
  if (out.empty()) throw EmptyQAError("stub_corpus: no qa items");
  return out;
}

std::vector<double> pretrain_stage0(TrainState& st, const Vocab& v,
                                    const std::vector<SceneSample>& train,
                                    const RunConfig& rc) {
  validate(rc);
  if (st.stage_done >= 0)
    throw StageOrderError("stage 0 already completed for this state");
  ModelCfgs M = model_cfgs(rc, v.size());
  std::vector<double> losses =
      pretrain_stub(st.params, v, stub_corpus(train), "lm", M.lcfg,
                    rc.stub_steps, rc.stub_batch, rc.seed, 1e-3, rc.max_text_len);
  st.stage_done = 0;
  st.config_hash = config_hash(rc);
  return losses;
}

void init_model(TrainState& st, const Vocab& v, const RunConfig& rc) {
  validate(rc);
  if (st.stage_done != 0)
    throw StageOrderError("init_model: needs the frozen stage-0 stub");
  ModelCfgs M = model_cfgs(rc, v.size());
  Rng rng = make_rng(rc.seed, "model-init");
  init_text_embed(st.params, rng, "enc.txt", v.size(), rc.d);
  init_image_encoder(st.params, rng, "enc.img", M.icfg);
  init_point_encoder(st.params, rng, "enc.pts", M.pcfg);
  init_fusion(st.params, rng, "fus", M.fcfg);
  init_qformer3d(st.params, rng, "qf3d", M.qcfg);
  if (rc.init_transfer) init_from_2d(st.params, "qf3d", "fus.qf2d");
  if (rc.freeze_encoders)
    for (const char* p : {"enc.img", "enc.pts", "enc.txt"})
      st.params.set_frozen_prefix(p, true);
  st.config_hash = config_hash(rc);
}

StageConfig stage_config(const RunConfig& rc, int stage) {
  validate(rc);
  if (stage < 1 || stage > 3) throw InvalidConfig("stage must be 1, 2 or 3");
  StageConfig sc;
  sc.stage = stage;
  sc.steps = stage == 1   ? rc.stage1_steps
             : stage == 2 ? rc.stage2_steps
                          : rc.stage3_steps;
  sc.batch = rc.batch_size;
  int64_t warm = warmup_steps_for(sc.steps, rc.warmup_frac);
  sc.schedule = stage == 3 ? finetune_schedule(sc.steps, warm)
                           : pretrain_schedule(sc.steps, warm);
  sc.freeze = {"lm"};
  if (rc.freeze_encoders)
    sc.freeze.insert({"enc.img", "enc.pts", "enc.txt"});
  if (stage == 1) sc.freeze.insert("fus");
  // Modules the forward graph never touches must be frozen too, or the
  // optimizer would reject them for having no gradient.
  if (rc.mode == SceneMode::points_only) {
    sc.freeze.insert("fus");
    sc.freeze.insert("enc.img");
  } else {
    if (!rc.with_pose) sc.freeze.insert("fus.pose");
    if (rc.aggregator != Aggregator::attention) sc.freeze.insert("fus.agg");
  }
  if (rc.mode == SceneMode::views_only) sc.freeze.insert("enc.pts");
  sc.tasks = {Task::count, Task::color, Task::exist, Task::spatial};
  if (stage != 3) sc.tasks.insert(Task::caption);
  sc.seed = rc.seed;
  return sc;
}

std::vector<TrainItem> build_items(const std::vector<SceneSample>& scenes,
                                   const Vocab& v,
                                   const std::set<Task>& tasks, int max_len) {
  std::vector<TrainItem> out;
  for (size_t si = 0; si < scenes.size(); ++si) {
    const SceneSample& s = scenes[si];
    for (size_t qi = 0; qi < s.qa.size(); ++qi) {
      const QAItem& qa = s.qa[qi];
      if (!tasks.count(qa.task)) continue;
      TrainItem it;
      it.scene = static_cast<int>(si);
      it.qa = static_cast<int>(qi);
      it.task = qa.task;
      it.targets_degraded = qa.targets_degraded;
      it.instr_ids = encode_text(v, qa.question, max_len);
      it.answer_ids = encode_text(v, qa.answer, max_len);
      it.answer = qa.answer;
      out.push_back(std::move(it));
    }
  }
  return out;
}

// ---- forward graph ----------------------------------------------------------

namespace {

struct ForwardEnv {
  const std::vector<SceneSample>& scenes;
  const ModelCfgs& M;
  const RunConfig& rc;
  FeatureCache* cache = nullptr;
  bool cache_img = false;
  bool cache_pts = false;
  bool cache_vas = false;
};

int image_tokens_node(ModelCtx<float>& mc, ForwardEnv& env, int scene,
                      int view) {
  if (env.cache_img && env.cache) {
    auto key = std::make_pair(scene, view);
    auto it = env.cache->image_tokens.find(key);
    if (it != env.cache->image_tokens.end())
      return ad::input(mc.tape, it->second);
    int node = encode_image(mc, env.scenes[static_cast<size_t>(scene)].views[static_cast<size_t>(view)],
                            "enc.img", env.M.icfg);
    env.cache->image_tokens.emplace(key, Mat<float>(mc.tape.val(node)));
    return node;
  }
  return encode_image(mc, env.scenes[static_cast<size_t>(scene)].views[static_cast<size_t>(view)],
                      "enc.img", env.M.icfg);
}

int point_tokens_node(ModelCtx<float>& mc, ForwardEnv& env, int scene) {
  const SceneSample& s = env.scenes[static_cast<size_t>(scene)];
  const PointCloud& cloud =
      env.rc.use_clean_cloud ? s.cloud_clean : s.cloud_degraded;
  if (env.cache_pts && env.cache) {
    auto it = env.cache->point_tokens.find(scene);
    if (it != env.cache->point_tokens.end())
      return ad::input(mc.tape, it->second);
    int node = encode_points(mc, cloud, "enc.pts", env.M.pcfg);
    env.cache->point_tokens.emplace(scene, Mat<float>(mc.tape.val(node)));
    return node;
  }
  return encode_points(mc, cloud, "enc.pts", env.M.pcfg);
}

// Fused view-as-scene features. These depend on the instruction (it shares
// the 2d block self-attention), so the cache key is per question, not per
// scene.
int vas_node(ModelCtx<float>& mc, ForwardEnv& env, int scene, int qa,
             const TextEmb& instr) {
  if (env.cache_vas && env.cache) {
    auto it = env.cache->vas.find(std::make_pair(scene, qa));
    if (it != env.cache->vas.end()) return ad::input(mc.tape, it->second);
  }
  const SceneSample& s = env.scenes[static_cast<size_t>(scene)];
  std::vector<int> feats;
  for (int i = 0; i < env.rc.n_views; ++i) {
    int q = extract_view_features(mc, image_tokens_node(mc, env, scene, i),
                                  instr, "fus.qf2d", env.M.fcfg);
    if (env.rc.with_pose)
      q = fuse_pose(mc, q,
                    pose_embedding(mc, s.views[static_cast<size_t>(i)].pose, "fus.pose"));
    feats.push_back(q);
  }
  int vas = env.rc.aggregator == Aggregator::attention
                ? aggregate_views(mc, feats, "fus.agg", env.M.fcfg)
                : aggregate_baseline(mc, feats, env.rc.aggregator);
  if (env.cache_vas && env.cache)
    env.cache->vas.emplace(std::make_pair(scene, qa), Mat<float>(mc.tape.val(vas)));
  return vas;
}

SceneEmbedding item_scene(ModelCtx<float>& mc, ForwardEnv& env,
                          const TrainItem& it) {
  TextEmb instr = embed_text(mc, it.instr_ids, "enc.txt");
  int vas = -1, pts = -1;
  if (env.rc.mode != SceneMode::points_only)
    vas = vas_node(mc, env, it.scene, it.qa, instr);
  if (env.rc.mode != SceneMode::views_only)
    pts = point_tokens_node(mc, env, it.scene);
  return forward_3d_aware(mc, vas, instr, pts, "qf3d", env.M.qcfg);
}

void check_scenes(const std::vector<SceneSample>& scenes, const RunConfig& rc,
                  const char* who) {
  if (scenes.empty())
    throw EmptyInputError(std::string(who) + ": no scenes");
  for (const SceneSample& s : scenes)
    if (static_cast<int>(s.views.size()) < rc.n_views)
      throw InvalidConfig(std::string(who) + ": scene has " +
                          std::to_string(s.views.size()) +
                          " views, config wants " + std::to_string(rc.n_views));
}

constexpr const char* kModules[] = {"enc.img", "enc.pts", "enc.txt",
                                    "fus",     "qf3d",    "lm"};

}  // namespace

// ---- stage training ---------------------------------------------------------

RunRecord run_stage(TrainState& st, const StageConfig& sc,
                    const std::vector<SceneSample>& train, const Vocab& v,
                    const RunConfig& rc, FeatureCache* cache,
                    const std::function<void(TrainState&)>& test_hook) {
  require_stage(st, sc.stage);
  if (!st.params.has("qf3d.query"))
    throw InvalidConfig("run_stage: model not initialized");
  check_scenes(train, rc, "run_stage");
  ModelCfgs M = model_cfgs(rc, v.size());
  std::vector<TrainItem> items = build_items(train, v, sc.tasks, rc.max_text_len);
  if (items.empty()) throw EmptyQAError("run_stage: no items for stage tasks");

  for (const char* m : kModules)
    st.params.set_frozen_prefix(m, sc.freeze.count(m) > 0);
  for (const std::string& f : sc.freeze) {
    bool top = false;
    for (const char* m : kModules) top = top || f == m;
    if (!top) st.params.set_frozen_prefix(f, true);
  }

  RunRecord rec;
  rec.stage = sc.stage;
  rec.config_hash = config_hash(rc);
  for (const std::string& f : sc.freeze)
    rec.frozen_start[f] = st.params.fingerprint({f});
  rec.lm_start = st.params.fingerprint({"lm"});

  bool cache_img = sc.freeze.count("enc.img") > 0;
  bool cache_vas = cache_img && sc.freeze.count("enc.txt") > 0 &&
                   sc.freeze.count("fus") > 0;
  ForwardEnv env{train, M, rc, cache, cache_img,
                 sc.freeze.count("enc.pts") > 0, cache_vas};

  st.opt = OptimizerState<float>{};
  Rng batch_rng = make_rng(sc.seed, "stage" + std::to_string(sc.stage) + "-batch");
  const int n = static_cast<int>(items.size());
  for (int step = 0; step < sc.steps; ++step) {
    double lr = lr_at_step(sc.schedule, step);
    Tape<float> t;
    ModelCtx<float> mc{t, st.params, true};
    std::vector<int> parts;
    for (int b = 0; b < sc.batch; ++b) {
      const TrainItem& it = items[static_cast<size_t>(uniform_int(batch_rng, 0, n - 1))];
      parts.push_back(lm_loss(mc, item_scene(mc, env, it), it.instr_ids,
                              it.answer_ids, "lm", M.lcfg));
    }
    int loss = ad::average_scalars(t, parts);
    double val = static_cast<double>(t.val(loss)(0, 0));
    if (!std::isfinite(val))
      throw NumericError("stage " + std::to_string(sc.stage) +
                         ": loss not finite at step " + std::to_string(step));
    t.backward(loss);
    GradStore<float> grads;
    mc.flush_grads(grads);
    adamw_step(st.params, grads, st.opt, lr);
    rec.loss.push_back(val);
    rec.lr.push_back(lr);
    if (test_hook) test_hook(st);
  }
  rec.lr_end = lr_at_step(sc.schedule, sc.steps);

  for (const std::string& f : sc.freeze) {
    rec.frozen_end[f] = st.params.fingerprint({f});
    if (rec.frozen_end[f] != rec.frozen_start[f])
      throw FreezeViolationError("stage " + std::to_string(sc.stage) +
                                 ": frozen subset '" + f +
                                 "' changed during training");
  }
  rec.lm_end = st.params.fingerprint({"lm"});
  st.stage_done = sc.stage;
  return rec;
}

std::string record_jsonl(const RunRecord& rec) {
  nlohmann::ordered_json h;
  h["stage"] = rec.stage;
  h["config_hash"] = rec.config_hash;
  h["steps"] = rec.loss.size();
  h["lr_end"] = rec.lr_end;
  h["lm_start"] = hex64(rec.lm_start);
  h["lm_end"] = hex64(rec.lm_end);
  nlohmann::ordered_json fs = nlohmann::ordered_json::object();
  nlohmann::ordered_json fe = nlohmann::ordered_json::object();
  for (const auto& [k, f] : rec.frozen_start) fs[k] = hex64(f);
  for (const auto& [k, f] : rec.frozen_end) fe[k] = hex64(f);
  h["frozen_start"] = fs;
  h["frozen_end"] = fe;
  std::string out = h.dump() + "\n";
  for (size_t i = 0; i < rec.loss.size(); ++i) {
    nlohmann::ordered_json l;
    l["step"] = i;
    l["loss"] = rec.loss[i];
    l["lr"] = rec.lr[i];
    out += l.dump() + "\n";
  }
  return out;
}

// ---- evaluation -------------------------------------------------------------

EvalResult aggregate_eval(const std::vector<EvalPair>& pairs,
                          const std::vector<char>& degraded,
                          const std::vector<char>& spatial) {
  if (pairs.size() != degraded.size() || pairs.size() != spatial.size())
    throw ShapeError("aggregate_eval: mask length mismatch");
  EvalResult r;
  r.report = report_metrics(pairs);
  r.n_items = static_cast<int>(pairs.size());
  std::vector<EvalPair> dsub, ssub;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (degraded[i]) dsub.push_back(pairs[i]);
    if (spatial[i]) ssub.push_back(pairs[i]);
  }
  r.n_degraded = static_cast<int>(dsub.size());
  r.em_degraded = dsub.empty() ? 0.0 : exact_match(dsub);
  r.n_spatial = static_cast<int>(ssub.size());
  r.em_spatial = ssub.empty() ? 0.0 : exact_match(ssub);
  r.pairs = pairs;
  return r;
}

EvalResult evaluate(TrainState& st, const std::vector<SceneSample>& split,
                    SceneMode mode, const Vocab& v, const RunConfig& rc,
                    FeatureCache* cache) {
  validate(rc);
  if (!st.params.has("qf3d.query"))
    throw InvalidConfig("evaluate: model not initialized");
  check_scenes(split, rc, "evaluate");
  RunConfig ec = rc;
  ec.mode = mode;
  ModelCfgs M = model_cfgs(ec, v.size());
  // Image and point caches survive across calls only because frozen encoders
  // never move; fused features can go stale between stages, so no vas cache.
  bool enc_static = rc.freeze_encoders && cache != nullptr;
  ForwardEnv env{split, M, ec, cache, enc_static, enc_static, false};
  std::set<Task> all = {Task::count, Task::color, Task::exist, Task::spatial,
                        Task::caption};
  std::vector<TrainItem> items = build_items(split, v, all, rc.max_text_len);
  if (items.empty()) throw EmptyQAError("evaluate: no qa items");
  GenerationConfig gen;
  gen.max_new_tokens = rc.max_new_tokens;
  std::vector<EvalPair> pairs;
  std::vector<char> deg, spa;
  for (const TrainItem& it : items) {
    Tape<float> t;
    ModelCtx<float> mc{t, st.params, false};
    SceneEmbedding scene = item_scene(mc, env, it);
    pairs.push_back(EvalPair{
        lm_generate(mc, scene, it.instr_ids, v, "lm", M.lcfg, gen),
        {it.answer}});
    deg.push_back(it.targets_degraded ? 1 : 0);
    spa.push_back(it.task == Task::spatial ? 1 : 0);
  }
  return aggregate_eval(pairs, deg, spa);
}

std::string eval_metrics_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["em"] = r.report.em;
  j["bleu1"] = r.report.bleu1;
  j["bleu2"] = r.report.bleu2;
  j["bleu3"] = r.report.bleu3;
  j["bleu4"] = r.report.bleu4;
  j["rouge_l"] = r.report.rouge_l;
  j["cider"] = r.report.cider;
  j["em_degraded"] = r.em_degraded;
  j["n_degraded"] = r.n_degraded;
  j["em_spatial"] = r.em_spatial;
  j["n_spatial"] = r.n_spatial;
  j["n_items"] = r.n_items;
  return j.dump(2);
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'A', 'R', 'G', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

void write_exact(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw IoError("checkpoint: write failed");
}

uint64_t blob_fnv(const Mat<float>& m) {
  return fnv1a(m.data(), sizeof(float) * static_cast<size_t>(m.size()));
}

nlohmann::ordered_json blob_entry(const std::string& name,
                                  const Mat<float>& m) {
  nlohmann::ordered_json e;
  e["name"] = name;
  e["rows"] = m.rows();
  e["cols"] = m.cols();
  e["fnv"] = hex64(blob_fnv(m));
  return e;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const TrainState& st) {
  nlohmann::ordered_json man;
  man["version"] = kCkptVersion;
  man["stage"] = st.stage_done;
  man["config_hash"] = st.config_hash;
  man["adam_step"] = st.opt.step;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& [name, e] : st.params) {
    nlohmann::ordered_json t = blob_entry(name, e.tensor);
    t["frozen"] = e.frozen;
    tensors.push_back(std::move(t));
  }
  man["tensors"] = std::move(tensors);
  nlohmann::ordered_json am = nlohmann::ordered_json::array();
  for (const auto& [name, m] : st.opt.m) am.push_back(blob_entry(name, m));
  man["adam_m"] = std::move(am);
  nlohmann::ordered_json av = nlohmann::ordered_json::array();
  for (const auto& [name, m] : st.opt.v) av.push_back(blob_entry(name, m));
  man["adam_v"] = std::move(av);

  std::string mtxt = man.dump();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + file.string());
  write_exact(out, kCkptMagic, sizeof(kCkptMagic));
  uint32_t ver = kCkptVersion;
  uint32_t len = static_cast<uint32_t>(mtxt.size());
  write_exact(out, &ver, sizeof(ver));
  write_exact(out, &len, sizeof(len));
  write_exact(out, mtxt.data(), mtxt.size());
  for (const auto& [name, e] : st.params)
    write_exact(out, e.tensor.data(), sizeof(float) * static_cast<size_t>(e.tensor.size()));
  for (const auto& [name, m] : st.opt.m)
    write_exact(out, m.data(), sizeof(float) * static_cast<size_t>(m.size()));
  for (const auto& [name, m] : st.opt.v)
    write_exact(out, m.data(), sizeof(float) * static_cast<size_t>(m.size()));
  out.close();
  if (!out) throw IoError("checkpoint: close failed for " + file.string());
}

TrainState load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw IoError("checkpoint: bad magic in " + file.string());
  uint32_t ver = 0, len = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || ver != kCkptVersion)
    throw IoError("checkpoint: unsupported version in " + file.string());
  std::string mtxt(len, '\0');
  in.read(mtxt.data(), len);
  if (!in) throw IoError("checkpoint: truncated manifest in " + file.string());

  TrainState st;
  try {
    nlohmann::ordered_json man = nlohmann::ordered_json::parse(mtxt);
    st.stage_done = man.at("stage").get<int>();
    st.config_hash = man.at("config_hash").get<std::string>();
    st.opt.step = man.at("adam_step").get<int64_t>();
    auto read_blob = [&](const nlohmann::ordered_json& e) {
      std::string name = e.at("name").get<std::string>();
      int64_t rows = e.at("rows").get<int64_t>();
      int64_t cols = e.at("cols").get<int64_t>();
      if (rows < 0 || cols < 0)
        throw IoError("checkpoint: bad shape for " + name);
      Mat<float> m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(m.size())));
      if (!in) throw IoError("checkpoint: truncated blob for " + name);
      if (hex64(blob_fnv(m)) != e.at("fnv").get<std::string>())
        throw ChecksumError("checkpoint: checksum mismatch for " + name);
      return std::make_pair(std::move(name), std::move(m));
    };
    for (const auto& e : man.at("tensors")) {
      bool frozen = e.at("frozen").get<bool>();
      auto [name, m] = read_blob(e);
      st.params.add(name, std::move(m), frozen);
    }
    for (const auto& e : man.at("adam_m")) {
      auto [name, m] = read_blob(e);
      st.opt.m.emplace(std::move(name), std::move(m));
    }
    for (const auto& e : man.at("adam_v")) {
      auto [name, m] = read_blob(e);
      st.opt.v.emplace(std::move(name), std::move(m));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("checkpoint: bad manifest: ") + ex.what());
  }
  return st;
}

// ---- pipeline ---------------------------------------------------------------

PipelineResult run_pipeline(TrainState& st, const RunConfig& rc,
                            const std::vector<SceneSample>& train,
                            const std::vector<SceneSample>& eval_split,
                            const Vocab& v, const std::vector<int>& stages) {
  if (stages.empty()) throw InvalidConfig("run_pipeline: no stages");
  FeatureCache train_cache, eval_cache;
  PipelineResult out;
  int expect = 1;
  for (int k : stages) {
    if (k < expect || k > 3)
      throw InvalidConfig("run_pipeline: stages must be increasing, in 1..3");
    while (expect < k) skip_stage(st, expect++);
    out.records.push_back(
        run_stage(st, stage_config(rc, k), train, v, rc, &train_cache));
    expect = k + 1;
  }
  out.eval = evaluate(st, eval_split, rc.mode, v, rc, &eval_cache);
  return out;
}

// ---- ablations --------------------------------------------------------------

const char* axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::mode: return "mode";
    case AblationAxis::n_views: return "n_views";
    case AblationAxis::aggregator: return "aggregator";
    case AblationAxis::pose: return "pose";
    case AblationAxis::init: return "init";
    case AblationAxis::stages: return "stages";
  }
  return "?";
}

AblationAxis axis_from_name(const std::string& s) {
  for (AblationAxis a : {AblationAxis::mode, AblationAxis::n_views,
                         AblationAxis::aggregator, AblationAxis::pose,
                         AblationAxis::init, AblationAxis::stages})
    if (s == axis_name(a)) return a;
  throw InvalidConfig("unknown ablation axis: " + s);
}

std::string ablation_markdown(const AblationTable& t) {
  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return std::string(buf);
  };
  std::string out;
  out += std::string("### ") + axis_name(t.axis) + "\n\n";
  out += "| setting | EM | Bleu-1 | Bleu-4 | Rouge-L | CIDEr |\n";
  out += "|---|---:|---:|---:|---:|---:|\n";
  for (const AblationRow& r : t.rows) {
    const MetricReport& m = r.eval.report;
    out += "| " + r.setting + " | " + cell(m.em) + " | " + cell(m.bleu1) +
           " | " + cell(m.bleu4) + " | " + cell(m.rouge_l) + " | " +
           cell(m.cider) + " |\n";
  }
  return out;
}

AblationTable run_ablation(AblationAxis axis, const RunConfig& base,
                           const TrainState& stage0,
                           const std::vector<SceneSample>& train,
                           const std::vector<SceneSample>& eval_split,
                           const Vocab& v) {
  validate(base);
  if (stage0.stage_done != 0)
    throw StageOrderError("run_ablation: needs a stage-0 state");

  struct Variant {
    std::string setting;
    RunConfig rc;
    std::vector<int> stages = {1, 2, 3};
  };
  std::vector<Variant> vars;
  auto push = [&](const std::string& setting, RunConfig rc,
                  std::vector<int> stages = {1, 2, 3}) {
    vars.push_back(Variant{setting, rc, std::move(stages)});
  };
  switch (axis) {
    case AblationAxis::mode:
      for (SceneMode m : {SceneMode::full, SceneMode::views_only,
                          SceneMode::points_only}) {
        RunConfig rc = base;
        rc.mode = m;
        push(scene_mode_name(m), rc);
      }
      break;
    case AblationAxis::n_views:
      for (int n : {8, 16, 32}) {
        RunConfig rc = base;
        rc.n_views = n;
        push(std::to_string(n), rc);
      }
      break;
    case AblationAxis::aggregator:
      for (Aggregator a : {Aggregator::attention, Aggregator::mean,
                           Aggregator::max}) {
        RunConfig rc = base;
        rc.aggregator = a;
        push(aggregator_name(a), rc);
      }
      break;
    case AblationAxis::pose:
      for (bool on : {true, false}) {
        RunConfig rc = base;
        rc.with_pose = on;
        push(on ? "on" : "off", rc);
      }
      break;
    case AblationAxis::init:
      for (bool transfer : {true, false}) {
        RunConfig rc = base;
        rc.init_transfer = transfer;
        push(transfer ? "transfer" : "random", rc);
      }
      break;
    case AblationAxis::stages: {
      std::vector<std::pair<std::string, std::vector<int>>> plans = {
          {"1+2+3", {1, 2, 3}},
          {"2+3", {2, 3}},
          {"1+3", {1, 3}},
          {"3", {3}},
      };
      for (auto& [setting, stages] : plans) push(setting, base, stages);
      break;
    }
  }

  AblationTable table;
  table.axis = axis;
  for (const Variant& var : vars) {
    TrainState st;
    st.params = stage0.params;
    st.stage_done = 0;
    init_model(st, v, var.rc);
    PipelineResult pr = run_pipeline(st, var.rc, train, eval_split, v, var.stages);
    AblationRow row;
    row.setting = var.setting;
    row.final_loss = std::numeric_limits<double>::quiet_NaN();
    for (auto it = pr.records.rbegin(); it != pr.records.rend(); ++it)
      if (!it->loss.empty()) {
        row.final_loss = it->loss.back();
        break;
      }
    row.eval = pr.eval;
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---- modality compensation --------------------------------------------------

CompensationResult run_compensation(const RunConfig& rc,
                                    const std::vector<SceneSample>& train,
                                    const std::vector<SceneSample>& eval_split,
                                    const Vocab& v) {
  CompensationResult out;
  for (SceneMode m : {SceneMode::full, SceneMode::points_only}) {
    RunConfig mrc = rc;
    mrc.mode = m;
    TrainState st;
    pretrain_stage0(st, v, train, mrc);
    init_model(st, v, mrc);
    PipelineResult pr = run_pipeline(st, mrc, train, eval_split, v);
    (m == SceneMode::full ? out.full : out.points_only) = pr.eval;
  }
  out.degraded_gap = out.full.em_degraded - out.points_only.em_degraded;
  out.overall_gap = out.full.report.em - out.points_only.report.em;
  return out;
}

}  // namespace argus
