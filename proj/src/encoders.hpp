#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nn.hpp"
#include "scene.hpp"

namespace argus {

// ---- text -------------------------------------------------------------------

struct Vocab {
  static constexpr int pad = 0, bos = 1, eos = 2, unk = 3;
  std::map<std::string, int> to_id;
  std::vector<std::string> to_token;  // dense, id -> token

  int size() const { return static_cast<int>(to_token.size()); }
  int id(const std::string& tok) const {
    auto it = to_id.find(tok);
    return it == to_id.end() ? unk : it->second;
  }
};

// Whitespace-split lowercase tokens, ids assigned by descending frequency with
// a lexicographic tiebreak, after the four specials.
Vocab build_vocab(const std::vector<std::string>& corpus);

// Every word the scene templates can emit. Building the vocab from this keeps
// token ids stable across datasets and leaves nothing out-of-vocabulary.
std::vector<std::string> canonical_corpus();

std::vector<int> encode_text(const Vocab& v, const std::string& text, int max_len);
std::string decode_text(const Vocab& v, const std::vector<int>& ids);

void save_vocab(const std::filesystem::path& file, const Vocab& v);
Vocab load_vocab(const std::filesystem::path& file);

// ---- configs ----------------------------------------------------------------

struct ImageEncoderCfg {
  int image_size = 64;
  int patch = 8;
  int d = 64;
  int heads = 4;
  int blocks = 2;

  int tokens_per_side() const { return image_size / patch; }
  int tokens() const { return tokens_per_side() * tokens_per_side(); }
};

struct PointEncoderCfg {
  int n_tokens = 256;
  int knn = 8;
  int d = 64;
  int heads = 4;
  int blocks = 2;
};

// ---- initialization ---------------------------------------------------------

template <typename T>
void init_text_embed(ParameterStore<T>& s, Rng& rng, const std::string& p,
                     int vocab_size, int d) {
  s.add(p + ".embed", randn_scaled<T>(vocab_size, d, rng, 0.02));
}

template <typename T>
void init_image_encoder(ParameterStore<T>& s, Rng& rng, const std::string& p,
                        const ImageEncoderCfg& cfg) {
  if (cfg.image_size % cfg.patch != 0)
    throw InvalidConfig("patch size must divide the image size");
  nn::init_linear(s, rng, p + ".patch", cfg.patch * cfg.patch * 3, cfg.d);
  s.add(p + ".pos", randn_scaled<T>(cfg.tokens(), cfg.d, rng, 0.02));
  for (int b = 0; b < cfg.blocks; ++b)
    nn::init_block(s, rng, p + ".blk" + std::to_string(b), cfg.d, /*cross=*/false);
}

template <typename T>
void init_point_encoder(ParameterStore<T>& s, Rng& rng, const std::string& p,
                        const PointEncoderCfg& cfg) {
  nn::init_linear(s, rng, p + ".feat", 9, cfg.d);
  for (int b = 0; b < cfg.blocks; ++b)
    nn::init_block(s, rng, p + ".blk" + std::to_string(b), cfg.d, /*cross=*/false);
}

// ---- text embedding ---------------------------------------------------------

struct TextEmb {
  int node = -1;               // L x d
  std::vector<char> mask;      // true for real tokens, false at pad
};

template <typename T>
TextEmb embed_text(ModelCtx<T>& mc, const std::vector<int>& ids,
                   const std::string& p) {
  if (ids.empty()) throw EmptyInputError("embed_text: no token ids");
  int table = mc.P(p + ".embed");
  const Eigen::Index V = mc.tape.val(table).rows();
  std::vector<int> rows;
  rows.reserve(ids.size());
  TextEmb out;
  for (int id : ids) {
    if (id < 0 || id >= V)
      throw VocabError("token id " + std::to_string(id) + " outside vocab of " +
                       std::to_string(V));
    rows.push_back(id);
    out.mask.push_back(id != Vocab::pad);
  }
  int emb = ad::rows_gather(mc.tape, table, rows);
  Mat<T> pe = nn::sinusoidal_pe<T>(static_cast<Eigen::Index>(ids.size()),
                               mc.tape.val(emb).cols());
  out.node = ad::add(mc.tape, emb, ad::input(mc.tape, pe));
  return out;
}

// ---- image encoder ----------------------------------------------------------

// Non-overlapping patches in row-major grid order; each row is the patch's
// pixels row by row, 3 channels per pixel.
template <typename T>
Mat<T> patchify(const View& v, int patch) {
  check_shape(v.width == v.height, "patchify: square images only");
  check_shape(patch > 0 && v.width % patch == 0,
              "patchify: patch must divide the image size");
  const int side = v.width / patch;
  Mat<T> out(static_cast<Eigen::Index>(side) * side,
             static_cast<Eigen::Index>(patch) * patch * 3);
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px) {
      Eigen::Index row = static_cast<Eigen::Index>(py) * side + px;
      Eigen::Index col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c)
            out(row, col++) =
                static_cast<T>(v.at(py * patch + y, px * patch + x, c));
    }
  return out;
}

template <typename T>
int encode_image(ModelCtx<T>& mc, const View& v, const std::string& p,
                 const ImageEncoderCfg& cfg) {
  check_shape(v.width == cfg.image_size && v.height == cfg.image_size,
              "encode_image: view does not match the configured size");
  int x = ad::input(mc.tape, patchify<T>(v, cfg.patch));
  x = nn::linear(mc, x, p + ".patch");
  x = ad::add(mc.tape, x, mc.P(p + ".pos"));
  for (int b = 0; b < cfg.blocks; ++b)
    x = nn::transformer_block(mc, x, p + ".blk" + std::to_string(b), cfg.heads);
  return x;
}

// ---- point encoder ----------------------------------------------------------

template <typename T>
struct PointFeats {
  Mat<T> centers;  // n_tokens x 3
  Mat<T> feats;    // n_tokens x 9: xyz, rgb, mean 8-NN offset
};

// Farthest-point sampling (started from the point farthest from the centroid,
// ties to the lowest index) plus local mean-offset features. Pure geometry,
// no learnable parts, deterministic.
template <typename T>
PointFeats<T> build_point_features(const PointCloud& pc,
                                   const PointEncoderCfg& cfg) {
  const int n = static_cast<int>(pc.size());
  if (n < 1) throw EmptyInputError("build_point_features: empty point cloud");

  Eigen::Vector3f centroid = Eigen::Vector3f::Zero();
  for (const auto& p : pc.xyz) centroid += p;
  centroid /= static_cast<float>(n);

  auto d2 = [&](int a, int b) { return (pc.xyz[static_cast<size_t>(a)] -
                                        pc.xyz[static_cast<size_t>(b)]).squaredNorm(); };

  std::vector<int> picked;
  std::vector<float> min_d(static_cast<size_t>(n),
                           std::numeric_limits<float>::max());
  int cur = 0;
  float best = -1.0f;
  for (int i = 0; i < n; ++i) {
    float d = (pc.xyz[static_cast<size_t>(i)] - centroid).squaredNorm();
    if (d > best) {
      best = d;
      cur = i;
    }
  }
  const int m = std::min(cfg.n_tokens, n);
  for (int k = 0; k < m; ++k) {
    picked.push_back(cur);
    for (int i = 0; i < n; ++i)
      min_d[static_cast<size_t>(i)] =
          std::min(min_d[static_cast<size_t>(i)], d2(i, cur));
    int far = 0;
    float fd = -1.0f;
    for (int i = 0; i < n; ++i)
      if (min_d[static_cast<size_t>(i)] > fd) {
        fd = min_d[static_cast<size_t>(i)];
        far = i;
      }
    cur = far;
  }

  PointFeats<T> out;
  out.centers.resize(cfg.n_tokens, 3);
  out.feats.resize(cfg.n_tokens, 9);
  const int kn = std::min(cfg.knn, n - 1);
  std::vector<std::pair<float, int>> near;
  for (int t = 0; t < cfg.n_tokens; ++t) {
    int pi = picked[static_cast<size_t>(t % m)];  // repeat when the cloud is tiny
    const Eigen::Vector3f& P = pc.xyz[static_cast<size_t>(pi)];
    const Eigen::Vector3f& C = pc.rgb[static_cast<size_t>(pi)];
    Eigen::Vector3f off = Eigen::Vector3f::Zero();
    if (kn > 0) {
      near.clear();
      for (int i = 0; i < n; ++i)
        if (i != pi) near.push_back({d2(i, pi), i});
      std::partial_sort(near.begin(), near.begin() + kn, near.end());
      for (int k = 0; k < kn; ++k)
        off += pc.xyz[static_cast<size_t>(near[static_cast<size_t>(k)].second)] - P;
      off /= static_cast<float>(kn);
    }
    for (int c = 0; c < 3; ++c) {
      out.centers(t, c) = static_cast<T>(P[c]);
      out.feats(t, c) = static_cast<T>(P[c]);
      out.feats(t, 3 + c) = static_cast<T>(C[c]);
      out.feats(t, 6 + c) = static_cast<T>(off[c]);
    }
  }
  return out;
}

template <typename T>
int point_encoder_forward(ModelCtx<T>& mc, const PointFeats<T>& pf,
                          const std::string& p, const PointEncoderCfg& cfg) {
  int x = nn::linear(mc, ad::input(mc.tape, pf.feats), p + ".feat");
  Mat<T> pe = nn::sincos_3d<T>(pf.centers, cfg.d);
  x = ad::add(mc.tape, x, ad::input(mc.tape, pe));
  for (int b = 0; b < cfg.blocks; ++b)
    x = nn::transformer_block(mc, x, p + ".blk" + std::to_string(b), cfg.heads);
  return x;
}

// The seed slot is part of the call contract but unused: center selection is
// fully deterministic, so identical inputs give identical tokens.
template <typename T>
int encode_points(ModelCtx<T>& mc, const PointCloud& pc, const std::string& p,
                  const PointEncoderCfg& cfg, uint64_t seed = 0) {
  (void)seed;
  return point_encoder_forward(mc, build_point_features<T>(pc, cfg), p, cfg);
}

}  // namespace argus
