#include "fga/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fga/numkit.hpp"
#include "fga/tensor_io.hpp"

namespace fga {

namespace {

const char* kBaseClassNames[10] = {"airplane", "automobile", "bird", "cat",
                                   "deer",     "dog",        "frog", "horse",
                                   "ship",     "truck"};

const char* kAdjectives[] = {"small", "large", "bright", "dark",  "old",
                             "young", "quiet", "fast",   "slow",  "round",
                             "red",   "green", "blue",   "plain", "wild"};

const char* kTemplateWords[] = {"a", "photo", "of", "the", "in", "this", "there", "is"};

}  // namespace

int Vocab::id_of(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk_id : it->second;
}

bool Vocab::knows(const std::string& word) const {
  return index_.find(word) != index_.end();
}

void Vocab::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i)
    index_[tokens[i]] = static_cast<int>(i);
}

std::vector<std::string> default_class_names(int k) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    if (i < 10)
      names.emplace_back(kBaseClassNames[i]);
    else
      names.push_back("object" + std::to_string(i));
  }
  return names;
}

Vocab make_default_vocab(const std::vector<std::string>& class_names) {
  Vocab v;
  v.tokens.push_back("<unk>");
  v.unk_id = 0;
  auto add = [&v](const std::string& w) {
    if (std::find(v.tokens.begin(), v.tokens.end(), w) == v.tokens.end())
      v.tokens.push_back(w);
  };
  for (const char* w : kTemplateWords) add(w);
  for (const auto& name : class_names) add(name);
  for (const char* w : kAdjectives) add(w);
  v.rebuild_index();

  // Synonym candidates: class names swap with other class names, adjectives
  // with other adjectives.
  std::vector<int> class_ids, adj_ids;
  for (const auto& name : class_names) class_ids.push_back(v.id_of(name));
  for (const char* w : kAdjectives) adj_ids.push_back(v.id_of(w));
  for (int id : class_ids) {
    std::vector<int>& list = v.synonyms[id];
    for (int other : class_ids)
      if (other != id) list.push_back(other);
  }
  for (int id : adj_ids) {
    std::vector<int>& list = v.synonyms[id];
    for (int other : adj_ids)
      if (other != id) list.push_back(other);
  }
  return v;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
  TokenSeq seq;
  std::string word;
  std::istringstream in(text);
  while (in >> word && seq.ids.size() < kMaxCaptionLen) {
    std::string lower;
    lower.reserve(word.size());
    for (char c : word)
      lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    seq.ids.push_back(vocab.id_of(lower));
  }
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (i) out += ' ';
    int id = seq.ids[i];
    out += (id >= 0 && id < vocab.size()) ? vocab.tokens[static_cast<std::size_t>(id)]
                                          : "<unk>";
  }
  return out;
}

PairedDataset gen_dataset(const SynthConfig& cfg, const Vocab& vocab,
                          std::uint64_t seed) {
  if (cfg.classes < 2) throw ConfigError("gen_dataset: need at least 2 classes");
  if (cfg.per_class < 1) throw ConfigError("gen_dataset: per_class must be >= 1");
  if (cfg.noise_sigma < 0) throw ConfigError("gen_dataset: noise_sigma must be >= 0");

  PairedDataset ds;
  ds.class_names = default_class_names(cfg.classes);
  ds.vocab = vocab;
  for (const auto& name : ds.class_names)
    if (!vocab.knows(name))
      throw ConfigError("gen_dataset: vocabulary lacks class name '" + name + "'");

  auto C = static_cast<std::size_t>(cfg.channels);
  auto H = static_cast<std::size_t>(cfg.height);
  auto W = static_cast<std::size_t>(cfg.width);
  std::size_t pix = C * H * W;
  std::size_t B = static_cast<std::size_t>(cfg.classes) *
                  static_cast<std::size_t>(cfg.per_class);
  ds.images = ImageBatch({B, C, H, W});

  RngStream proto_rng(seed, 0);
  std::vector<std::vector<scalar>> prototypes(static_cast<std::size_t>(cfg.classes));
  for (auto& p : prototypes) {
    p.resize(pix);
    for (scalar& x : p) x = static_cast<scalar>(proto_rng.uniform());
  }

  // Adjective pool for distractor words; class names stay out of it so a
  // caption's class signal is unambiguous.
  std::vector<int> distractor_pool;
  for (const char* w : kAdjectives)
    if (vocab.knows(w)) distractor_pool.push_back(vocab.id_of(w));

  std::size_t b = 0;
  for (int k = 0; k < cfg.classes; ++k) {
    for (int j = 0; j < cfg.per_class; ++j, ++b) {
      RngStream rng = RngStream(seed, 1).fork(b);
      const auto& proto = prototypes[static_cast<std::size_t>(k)];
      scalar* img = ds.images.data.data() + b * pix;
      for (std::size_t i = 0; i < pix; ++i) {
        double x = static_cast<double>(proto[i]) + cfg.noise_sigma * rng.normal();
        img[i] = static_cast<scalar>(std::min(1.0, std::max(0.0, x)));
      }
      ds.labels.push_back(k);

      std::vector<TokenSeq> caps;
      std::string base = "a photo of a " + ds.class_names[static_cast<std::size_t>(k)];
      for (int c = 0; c < std::max(1, cfg.captions_per_image); ++c) {
        std::string text = base;
        int extra = c == 0 ? 0
                           : static_cast<int>(rng.index(
                                 static_cast<std::size_t>(cfg.max_distractors + 1)));
        for (int e = 0; e < extra && !distractor_pool.empty(); ++e) {
          int id = distractor_pool[rng.index(distractor_pool.size())];
          text += " " + vocab.tokens[static_cast<std::size_t>(id)];
        }
        caps.push_back(tokenize(text, vocab));
      }
      ds.captions.push_back(std::move(caps));
    }
  }
  return ds;
}

PairedDataset gen_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  return gen_dataset(cfg, make_default_vocab(default_class_names(cfg.classes)), seed);
}

PairedDataset load_cifar10(const std::string& path, std::size_t max_records) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());

  constexpr std::size_t kRecord = 3073;
  if (bytes.size() % kRecord != 0)
    throw FormatError("cifar10 file '" + path + "': length " +
                      std::to_string(bytes.size()) + " not a multiple of 3073");
  std::size_t n = bytes.size() / kRecord;
  if (max_records > 0) n = std::min(n, max_records);

  PairedDataset ds;
  ds.class_names = default_class_names(10);
  ds.vocab = make_default_vocab(ds.class_names);
  ds.images = ImageBatch({std::max<std::size_t>(n, 1), 3, 32, 32});
  if (n == 0) ds.images = ImageBatch({0, 3, 32, 32});

  for (std::size_t r = 0; r < n; ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + r * kRecord;
    unsigned label = rec[0];
    if (label > 9)
      throw FormatError("cifar10 file '" + path + "': record " + std::to_string(r) +
                        " has label byte " + std::to_string(label));
    ds.labels.push_back(static_cast<int>(label));
    scalar* img = ds.images.data.data() + r * 3072;
    for (std::size_t i = 0; i < 3072; ++i)
      img[i] = static_cast<scalar>(rec[1 + i] / 255.0);
    std::string caption = "a photo of a " + ds.class_names[label];
    ds.captions.push_back({tokenize(caption, ds.vocab)});
  }
  return ds;
}

void save_dataset(const std::string& path_prefix, const PairedDataset& ds) {
  NamedTensors tensors;
  tensors.emplace_back("images", ds.images);
  Tensor labels({ds.labels.size()});
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    labels.data[i] = static_cast<scalar>(ds.labels[i]);
  tensors.emplace_back("labels", labels);
  write_tensor_file(path_prefix + ".fgat", tensors);

  nlohmann::json side;
  side["class_names"] = ds.class_names;
  side["vocab"] = ds.vocab.tokens;
  side["unk_id"] = ds.vocab.unk_id;
  nlohmann::json syn = nlohmann::json::object();
  for (const auto& [id, list] : ds.vocab.synonyms) syn[std::to_string(id)] = list;
  side["synonyms"] = syn;
  nlohmann::json caps = nlohmann::json::array();
  for (const auto& image_caps : ds.captions) {
    nlohmann::json per_image = nlohmann::json::array();
    for (const auto& c : image_caps) per_image.push_back(detokenize(c, ds.vocab));
    caps.push_back(per_image);
  }
  side["captions"] = caps;

  std::ofstream out(path_prefix + ".json", std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path_prefix + ".json' for writing");
  out << side.dump(2) << "\n";
}

PairedDataset load_dataset(const std::string& path_prefix) {
  NamedTensors tensors = read_tensor_file(path_prefix + ".fgat");
  std::ifstream in(path_prefix + ".json");
  if (!in) throw IoError("cannot open '" + path_prefix + ".json'");
  nlohmann::json side = nlohmann::json::parse(in, nullptr, true);

  PairedDataset ds;
  ds.images = find_tensor(tensors, "images");
  const Tensor& labels = find_tensor(tensors, "labels");
  for (scalar v : labels.data) ds.labels.push_back(static_cast<int>(v));

  ds.class_names = side.at("class_names").get<std::vector<std::string>>();
  ds.vocab.tokens = side.at("vocab").get<std::vector<std::string>>();
  ds.vocab.unk_id = side.at("unk_id").get<int>();
  for (const auto& [key, list] : side.at("synonyms").items())
    ds.vocab.synonyms[std::stoi(key)] = list.get<std::vector<int>>();
  ds.vocab.rebuild_index();

  for (const auto& per_image : side.at("captions")) {
    std::vector<TokenSeq> caps;
    for (const auto& c : per_image)
      caps.push_back(tokenize(c.get<std::string>(), ds.vocab));
    ds.captions.push_back(std::move(caps));
  }
  if (ds.captions.size() != ds.labels.size())
    throw FormatError("dataset '" + path_prefix + "': caption/label count mismatch");
  return ds;
}

}  // namespace fga
