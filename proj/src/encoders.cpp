#include "encoders.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace argus {

using nlohmann::json;

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::string lower;
  lower.reserve(text.size());
  for (char c : text)
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::istringstream iss(lower);
  std::vector<std::string> toks;
  for (std::string t; iss >> t;) toks.push_back(std::move(t));
  return toks;
}

const char* kSpecials[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

Vocab build_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw EmptyInputError("build_vocab: empty corpus");
  std::map<std::string, int> freq;
  for (const auto& line : corpus)
    for (auto& t : tokenize(line)) freq[t] += 1;

  std::vector<std::pair<std::string, int>> order(freq.begin(), freq.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  for (const char* s : kSpecials) {
    v.to_id[s] = v.size();
    v.to_token.push_back(s);
  }
  for (const auto& [tok, n] : order) {
    v.to_id[tok] = v.size();
    v.to_token.push_back(tok);
  }
  return v;
}

std::vector<std::string> canonical_corpus() {
  std::vector<std::string> c;
  std::string cats, plurals;
  for (const char* s : {"chair", "table", "lamp", "window", "sofa", "shelf"})
    cats += std::string(s) + " ";
  for (const char* s : {"chairs", "tables", "lamps", "windows", "sofas", "shelves"})
    plurals += std::string(s) + " ";
  c.push_back(cats);
  c.push_back(plurals);
  std::string colors;
  for (const auto& p : palette()) colors += std::string(p.name) + " ";
  c.push_back(colors);
  std::string digits;
  for (int i = 0; i <= 12; ++i) digits += std::to_string(i) + " ";
  c.push_back(digits);
  c.push_back("how many are there what color is the a left of right");
  c.push_back("describe room with yes no none leftmost rightmost wall floor .");
  return c;
}

std::vector<int> encode_text(const Vocab& v, const std::string& text, int max_len) {
  if (max_len < 2) throw InvalidConfig("encode_text: max_len must be >= 2");
  auto toks = tokenize(text);
  if (static_cast<int>(toks.size()) > max_len - 2)
    toks.resize(static_cast<size_t>(max_len - 2));
  std::vector<int> ids;
  ids.reserve(toks.size() + 2);
  ids.push_back(Vocab::bos);
  for (const auto& t : toks) ids.push_back(v.id(t));
  ids.push_back(Vocab::eos);
  return ids;
}

std::string decode_text(const Vocab& v, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= v.size())
      throw VocabError("decode_text: id " + std::to_string(id) + " out of range");
    if (id == Vocab::pad || id == Vocab::bos || id == Vocab::eos ||
        id == Vocab::unk)
      continue;
    if (!out.empty()) out += ' ';
    out += v.to_token[static_cast<size_t>(id)];
  }
  return out;
}

void save_vocab(const std::filesystem::path& file, const Vocab& v) {
  json j = json::object();
  for (const auto& [tok, id] : v.to_id) j[tok] = id;
  std::ofstream out(file);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << j.dump(2) << "\n";
}

Vocab load_vocab(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw VocabError("missing vocab file " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw VocabError("corrupt vocab file " + file.string() + ": " + e.what());
  }
  Vocab v;
  v.to_token.assign(j.size(), "");
  for (const auto& [tok, idj] : j.items()) {
    int id = idj.get<int>();
    if (id < 0 || id >= static_cast<int>(j.size()) ||
        !v.to_token[static_cast<size_t>(id)].empty())
      throw VocabError("vocab ids must be dense and unique in " + file.string());
    v.to_token[static_cast<size_t>(id)] = tok;
    v.to_id[tok] = id;
  }
  for (int i = 0; i < 4; ++i)
    if (v.to_token[static_cast<size_t>(i)] != kSpecials[i])
      throw VocabError("vocab specials malformed in " + file.string());
  return v;
}

}  // namespace argus
