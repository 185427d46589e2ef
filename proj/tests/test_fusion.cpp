#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fusion.hpp"
#include "gradcheck.hpp"

using namespace argus;

namespace {

template <typename T>
Mat<T> randm(Eigen::Index r, Eigen::Index c, uint64_t seed) {
  Rng rng = make_rng(seed, "randm");
  Mat<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal<T>(rng);
  return m;
}

template <typename T>
double max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

void attn_names(const std::string& a, std::set<std::string>& out) {
  for (const char* s : {".q.W", ".q.b", ".k.W", ".v.W", ".v.b", ".o.W", ".o.b"})
    out.insert(a + s);
}

void cross_block_names(const std::string& b, std::set<std::string>& out) {
  for (const char* s : {".ln1.g", ".ln1.b", ".ln2.g", ".ln2.b", ".ln3.g",
                        ".ln3.b", ".ffn1.W", ".ffn1.b", ".ffn2.W", ".ffn2.b"})
    out.insert(b + s);
  attn_names(b + ".attn", out);
  attn_names(b + ".xattn", out);
}

}  // namespace

// ---- parameter layout -------------------------------------------------------

TEST_CASE("fusion owns exactly the declared parameters") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.qf_blocks = 2;
  ParameterStore<float> ps;
  Rng rng = make_rng(1, "init");
  init_fusion(ps, rng, "fus", cfg);

  std::set<std::string> want = {"fus.qf2d.query", "fus.agg.query",
                                "fus.agg.proj.W", "fus.agg.proj.b",
                                "fus.pose.fc1.W", "fus.pose.fc1.b",
                                "fus.pose.fc2.W", "fus.pose.fc2.b"};
  for (int b = 0; b < cfg.qf_blocks; ++b)
    cross_block_names("fus.qf2d.blk" + std::to_string(b), want);
  for (int l = 0; l < kAggLayers; ++l)
    cross_block_names("fus.agg.layer" + std::to_string(l), want);

  std::set<std::string> got;
  for (const auto& [name, e] : ps) got.insert(name);
  CHECK(got == want);

  // the two query banks are 32 rows, the pose stack is two affine maps
  CHECK(ps.tensor("fus.qf2d.query").rows() == kQueryCount);
  CHECK(ps.tensor("fus.agg.query").rows() == kQueryCount);
  CHECK(ps.tensor("fus.pose.fc1.W").rows() == 16);
  CHECK(ps.tensor("fus.pose.fc1.W").cols() == cfg.d);
  CHECK(ps.tensor("fus.pose.fc2.W").rows() == cfg.d);
  CHECK(ps.tensor("fus.pose.fc2.W").cols() == cfg.d);
  CHECK(ps.tensor("fus.agg.proj.W").rows() == cfg.d);
  CHECK(ps.tensor("fus.agg.proj.W").cols() == cfg.d);

  CHECK_THROWS_AS(
      [] {
        FusionCfg bad;
        bad.d = 10;
        bad.heads = 4;
        ParameterStore<float> s;
        Rng r = make_rng(1, "x");
        init_fusion(s, r, "f", bad);
      }(),
      InvalidConfig);
}

// ---- per-view extraction ----------------------------------------------------

TEST_CASE("view extraction yields 32 rows and separates distinct images") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.qf_blocks = 2;
  ParameterStore<float> ps;
  Rng rng = make_rng(2, "init");
  init_fusion(ps, rng, "fus", cfg);
  init_text_embed(ps, rng, "txt", 12, cfg.d);

  for (uint64_t seed : {3u, 4u, 5u}) {
    Tape<float> t;
    ModelCtx<float> mc{t, ps, false};
    TextEmb instr = embed_text(mc, {Vocab::bos, 4, 7, Vocab::eos}, "txt");
    int img_a = ad::input(t, randm<float>(9, cfg.d, seed));
    int img_b = ad::input(t, randm<float>(9, cfg.d, seed + 100));
    int fa = extract_view_features(mc, img_a, instr, "fus.qf2d", cfg);
    int fb = extract_view_features(mc, img_b, instr, "fus.qf2d", cfg);
    CHECK(t.val(fa).rows() == kQueryCount);
    CHECK(t.val(fa).cols() == cfg.d);
    CHECK(max_abs_diff(t.val(fa), t.val(fb)) > 0.0);
  }

  // wrong token width is rejected
  Tape<float> t;
  ModelCtx<float> mc{t, ps, false};
  int bad = ad::input(t, randm<float>(9, cfg.d + 1, 6));
  CHECK_THROWS_AS(extract_view_features(mc, bad, TextEmb{}, "fus.qf2d", cfg),
                  ShapeError);
}

TEST_CASE("an all-pad instruction behaves exactly like no instruction") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  ParameterStore<float> ps;
  Rng rng = make_rng(7, "init");
  init_fusion(ps, rng, "fus", cfg);
  init_text_embed(ps, rng, "txt", 12, cfg.d);

  Tape<float> t;
  ModelCtx<float> mc{t, ps, false};
  int img = ad::input(t, randm<float>(9, cfg.d, 8));
  TextEmb padded = embed_text(mc, {Vocab::pad, Vocab::pad, Vocab::pad}, "txt");
  int with_pads = extract_view_features(mc, img, padded, "fus.qf2d", cfg);
  int without = extract_view_features(mc, img, TextEmb{}, "fus.qf2d", cfg);
  CHECK(t.val(with_pads) == t.val(without));

  // a real instruction does change the result
  TextEmb real = embed_text(mc, {Vocab::bos, 5, Vocab::eos}, "txt");
  int with_text = extract_view_features(mc, img, real, "fus.qf2d", cfg);
  CHECK(max_abs_diff(t.val(with_text), t.val(without)) > 0.0);

  // pads interleaved with real tokens are dropped, not attended
  TextEmb mixed = embed_text(mc, {Vocab::bos, 5, Vocab::pad, Vocab::eos}, "txt");
  CHECK(instruction_context(mc, mixed) >= 0);
  CHECK(t.val(instruction_context(mc, mixed)).rows() == 3);
}

// ---- pose embedding ---------------------------------------------------------

TEST_CASE("pose embedding is a deterministic two-layer map of the pose") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  ParameterStore<float> ps;
  Rng rng = make_rng(9, "init");
  init_pose_mlp(ps, rng, "pose", cfg);

  CameraPose a = camera_pose({3.f, 1.f, 2.f}, {0.f, 0.f, 1.f});
  CameraPose b = camera_pose({-2.f, 4.f, 1.f}, {0.5f, 0.5f, 1.f});

  Mat<float> ea, eb;
  {
    Tape<float> t;
    ModelCtx<float> mc{t, ps, false};
    int n = pose_embedding(mc, a, "pose");
    CHECK(t.val(n).rows() == 1);
    CHECK(t.val(n).cols() == cfg.d);
    ea = t.val(n);
    eb = t.val(pose_embedding(mc, b, "pose"));
  }
  {
    Tape<float> t;
    ModelCtx<float> mc{t, ps, false};
    CHECK(t.val(pose_embedding(mc, a, "pose")) == ea);
  }
  CHECK(max_abs_diff(ea, eb) > 0.0);

  // zero weights collapse the map to the output bias, whatever the pose
  ps.tensor("pose.fc1.W").setZero();
  ps.tensor("pose.fc2.W").setZero();
  Mat<float> bias = randm<float>(1, cfg.d, 10);
  ps.tensor("pose.fc2.b") = bias;
  for (const CameraPose& p : {a, b}) {
    Tape<float> t;
    ModelCtx<float> mc{t, ps, false};
    CHECK(t.val(pose_embedding(mc, p, "pose")) == bias);
  }
}

TEST_CASE("pose fusion is an exact broadcast add") {
  Tape<float> t;
  ParameterStore<float> ps;
  ModelCtx<float> mc{t, ps, false};
  Mat<float> qv = randm<float>(kQueryCount, 16, 11);
  Mat<float> pe = randm<float>(1, 16, 12);
  int q = ad::input(t, qv);
  int e = ad::input(t, pe);

  int fused = fuse_pose(mc, q, e);
  Mat<float> out = t.val(fused);
  for (Eigen::Index i = 0; i < qv.rows(); ++i)
    for (Eigen::Index j = 0; j < qv.cols(); ++j)
      CHECK(out(i, j) == qv(i, j) + pe(0, j));

  // adding zero is the identity, bitwise
  int z = ad::input(t, Mat<float>(Mat<float>::Zero(1, 16)));
  CHECK(t.val(fuse_pose(mc, q, z)) == qv);

  // adding the negation back recovers the input to rounding
  int ne = ad::input(t, Mat<float>(-pe));
  CHECK(max_abs_diff(t.val(fuse_pose(mc, fused, ne)), qv) < 1e-5);

  int short_e = ad::input(t, randm<float>(1, 8, 13));
  CHECK_THROWS_AS(fuse_pose(mc, q, short_e), ShapeError);
}

// ---- aggregation ------------------------------------------------------------

TEST_CASE("attention aggregation handles any view count at fixed output shape") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  ParameterStore<float> ps;
  Rng rng = make_rng(14, "init");
  init_aggregator(ps, rng, "agg", cfg);

  for (int n : {1, 8, 16, 32}) {
    Tape<float> t;
    ModelCtx<float> mc{t, ps, false};
    std::vector<int> views;
    for (int i = 0; i < n; ++i)
      views.push_back(ad::input(
          t, randm<float>(kQueryCount, cfg.d, 100 + static_cast<uint64_t>(i))));
    int vas = aggregate_views(mc, views, "agg", cfg);
    CHECK(t.val(vas).rows() == kQueryCount);
    CHECK(t.val(vas).cols() == cfg.d);
    CHECK(t.val(vas).allFinite());
  }

  Tape<float> t;
  ModelCtx<float> mc{t, ps, false};
  CHECK_THROWS_AS(aggregate_views(mc, {}, "agg", cfg), EmptyInputError);
  int stub = ad::input(t, randm<float>(kQueryCount - 1, cfg.d, 15));
  CHECK_THROWS_AS(aggregate_views(mc, {stub}, "agg", cfg), ShapeError);
}

TEST_CASE("aggregation is invariant to view order but not to pose attachment") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.qf_blocks = 1;
  ParameterStore<double> ps;
  Rng rng = make_rng(16, "init");
  init_fusion(ps, rng, "fus", cfg);

  const int n = 5;
  std::vector<Mat<double>> imgs;
  for (int i = 0; i < n; ++i)
    imgs.push_back(randm<double>(7, cfg.d, 200 + static_cast<uint64_t>(i)));
  std::vector<CameraPose> poses;
  for (int i = 0; i < n; ++i)
    poses.push_back(camera_pose({float(i + 1), float(2 * i - 3), 1.5f},
                                {0.f, 0.f, 1.f}));

  auto run = [&](const std::vector<int>& order, bool swap_poses) {
    Tape<double> t;
    ModelCtx<double> mc{t, ps, false};
    std::vector<int> feats;
    for (int idx : order) {
      int f = extract_view_features(
          mc, ad::input(t, imgs[static_cast<size_t>(idx)]), TextEmb{},
          "fus.qf2d", cfg);
      int pidx = swap_poses ? (idx + 1) % n : idx;
      int pe = pose_embedding(mc, poses[static_cast<size_t>(pidx)], "fus.pose");
      feats.push_back(fuse_pose(mc, f, pe));
    }
    return t.val(aggregate_views(mc, feats, "fus.agg", cfg));
  };

  std::vector<int> base_order = {0, 1, 2, 3, 4};
  Mat<double> base = run(base_order, false);
  std::mt19937 shuf(71);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<int> order = base_order;
    std::shuffle(order.begin(), order.end(), shuf);
    CHECK(max_abs_diff(run(order, false), base) < 1e-8);
  }

  // same views, rotated pose assignment: a genuinely different scene reading
  CHECK(max_abs_diff(run(base_order, true), base) > 1e-6);
}

TEST_CASE("baseline reductions match elementwise oracles") {
  Tape<float> t;
  ParameterStore<float> ps;
  ModelCtx<float> mc{t, ps, false};
  Mat<float> a = randm<float>(kQueryCount, 12, 20);
  Mat<float> b = randm<float>(kQueryCount, 12, 21);
  Mat<float> c = randm<float>(kQueryCount, 12, 22);
  int na = ad::input(t, a), nb = ad::input(t, b), nc = ad::input(t, c);

  // a single view passes through untouched
  CHECK(t.val(aggregate_baseline(mc, {na}, Aggregator::mean)) == a);
  CHECK(t.val(aggregate_baseline(mc, {na}, Aggregator::max)) == a);

  // mean of a view and its negation cancels exactly
  int neg = ad::input(t, Mat<float>(-a));
  CHECK(t.val(aggregate_baseline(mc, {na, neg}, Aggregator::mean)) ==
        Mat<float>::Zero(kQueryCount, 12));

  // copies: the tape's node storage may move as later calls grow it
  Mat<float> mx = t.val(aggregate_baseline(mc, {na, nb}, Aggregator::max));
  Mat<float> mn = t.val(aggregate_baseline(mc, {na, nb, nc}, Aggregator::mean));
  const float third = static_cast<float>(1.0 / 3.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      CHECK(mx(i, j) == std::max(a(i, j), b(i, j)));
      CHECK(mn(i, j) == ((a(i, j) + b(i, j)) + c(i, j)) * third);
    }

  CHECK_THROWS_AS(aggregate_baseline(mc, {}, Aggregator::mean), EmptyInputError);
  CHECK_THROWS_AS(aggregate_baseline(mc, {na}, Aggregator::attention),
                  InvalidConfig);
}

TEST_CASE("baseline reductions are order-free") {
  ParameterStore<double> ps;
  Mat<double> a = randm<double>(kQueryCount, 8, 30);
  Mat<double> b = randm<double>(kQueryCount, 8, 31);
  Mat<double> c = randm<double>(kQueryCount, 8, 32);
  auto run = [&](std::vector<Mat<double>*> order, Aggregator mode) {
    Tape<double> t;
    ModelCtx<double> mc{t, ps, false};
    std::vector<int> v;
    for (Mat<double>* m : order) v.push_back(ad::input(t, *m));
    return t.val(aggregate_baseline(mc, v, mode));
  };
  for (Aggregator mode : {Aggregator::mean, Aggregator::max}) {
    Mat<double> fwd = run({&a, &b, &c}, mode);
    Mat<double> rev = run({&c, &a, &b}, mode);
    CHECK(max_abs_diff(fwd, rev) < 1e-8);
  }
}

// ---- gradients --------------------------------------------------------------

TEST_CASE("every fusion parameter trains through the pipeline") {
  FusionCfg cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.qf_blocks = 2;

  std::set<std::string> touched;
  size_t fusion_params = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    ParameterStore<float> ps;
    Rng rng = make_rng(seed, "init");
    init_fusion(ps, rng, "fus", cfg);
    init_text_embed(ps, rng, "txt", 12, cfg.d);
    fusion_params = 0;
    for (const auto& [name, e] : ps)
      if (name.rfind("fus.", 0) == 0) ++fusion_params;

    Tape<float> t;
    ModelCtx<float> mc{t, ps, true};
    TextEmb instr = embed_text(mc, {Vocab::bos, 4, Vocab::eos}, "txt");
    std::vector<int> feats;
    for (int i = 0; i < 2; ++i) {
      int img = ad::input(
          t, randm<float>(8, cfg.d, 40 + 2 * seed + static_cast<uint64_t>(i)));
      int f = extract_view_features(mc, img, instr, "fus.qf2d", cfg);
      CameraPose p = camera_pose({float(i + 1), 0.5f, 2.f}, {0.f, 0.f, 1.f});
      feats.push_back(fuse_pose(mc, f, pose_embedding(mc, p, "fus.pose")));
    }
    int vas = aggregate_views(mc, feats, "fus.agg", cfg);
    int loss = ad::mean_all(t, ad::cmul(t, vas, vas));
    t.backward(loss);
    GradStore<float> grads;
    mc.flush_grads(grads);
    for (const auto& [name, g] : grads)
      if (name.rfind("fus.", 0) == 0 && g.cwiseAbs().maxCoeff() > 0.0f)
        touched.insert(name);
  }
  CHECK(touched.size() == fusion_params);
}

TEST_CASE("the fused pipeline passes gradient checking") {
  FusionCfg cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.qf_blocks = 1;
  ParameterStore<double> ps;
  Rng rng = make_rng(55, "init");
  init_fusion(ps, rng, "fus", cfg);
  init_text_embed(ps, rng, "txt", 12, cfg.d);

  Mat<double> img0 = randm<double>(6, cfg.d, 60);
  Mat<double> img1 = randm<double>(6, cfg.d, 61);
  CameraPose p0 = camera_pose({2.f, 1.f, 1.f}, {0.f, 0.f, 1.f});
  CameraPose p1 = camera_pose({-1.f, 2.f, 2.f}, {0.f, 0.f, 1.f});
  // an interior pad exercises the row-filtered instruction path
  std::vector<int> ids = {Vocab::bos, 4, Vocab::pad, 7, Vocab::eos};

  auto loss_fn = [&](ParameterStore<double>& store, GradStore<double>* grads) {
    Tape<double> t;
    ModelCtx<double> mc{t, store, grads != nullptr};
    TextEmb instr = embed_text(mc, ids, "txt");
    int f0 = extract_view_features(mc, ad::input(t, img0), instr, "fus.qf2d", cfg);
    int f1 = extract_view_features(mc, ad::input(t, img1), instr, "fus.qf2d", cfg);
    int v0 = fuse_pose(mc, f0, pose_embedding(mc, p0, "fus.pose"));
    int v1 = fuse_pose(mc, f1, pose_embedding(mc, p1, "fus.pose"));
    int vas = aggregate_views(mc, {v0, v1}, "fus.agg", cfg);
    int loss = ad::mean_all(t, ad::cmul(t, vas, vas));
    double out = t.val(loss)(0, 0);
    if (grads) {
      t.backward(loss);
      mc.flush_grads(*grads);
    }
    return out;
  };
  auto report = gradcheck(ps, loss_fn, 1e-5);
  CHECK(report.coords_checked == ps.scalar_count());
  CHECK(report.max_rel_err < 1e-5);
}

// ---- end to end over rendered views -----------------------------------------

TEST_CASE("rendered views flow through the full fusion stack deterministically") {
  SceneConfig scfg;
  QAConfig qcfg;
  SampleParams sp;
  sp.n_points = 256;
  sp.n_views = 2;
  sp.image_size = 16;
  SceneSample s = generate_sample(scfg, qcfg, sp, 77);

  ImageEncoderCfg icfg;
  icfg.image_size = 16;
  icfg.patch = 8;
  icfg.d = 16;
  icfg.heads = 2;
  icfg.blocks = 1;
  FusionCfg fcfg;
  fcfg.d = 16;
  fcfg.heads = 2;
  fcfg.qf_blocks = 1;

  ParameterStore<float> ps;
  Rng rng = make_rng(78, "init");
  init_image_encoder(ps, rng, "img", icfg);
  init_fusion(ps, rng, "fus", fcfg);
  Vocab v = build_vocab(canonical_corpus());
  init_text_embed(ps, rng, "txt", v.size(), fcfg.d);
  std::vector<int> ids = encode_text(v, s.qa.at(0).question, 16);

  auto run = [&](Aggregator agg, bool with_pose) {
    Tape<float> t;
    ModelCtx<float> mc{t, ps, false};
    TextEmb instr = embed_text(mc, ids, "txt");
    return t.val(view_as_scene(mc, s.views, instr, "img", "fus", icfg, fcfg,
                               agg, with_pose));
  };

  Mat<float> a = run(Aggregator::attention, true);
  CHECK(a.rows() == kQueryCount);
  CHECK(a.cols() == fcfg.d);
  CHECK(a.allFinite());
  CHECK(run(Aggregator::attention, true) == a);  // bitwise repeatable

  // dropping the camera embeddings changes the outcome
  CHECK(max_abs_diff(run(Aggregator::attention, false), a) > 0.0);

  for (Aggregator agg : {Aggregator::mean, Aggregator::max}) {
    Mat<float> m = run(agg, true);
    CHECK(m.rows() == kQueryCount);
    CHECK(m.allFinite());
  }
}
