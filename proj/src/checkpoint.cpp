#include "metadiffub/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "metadiffub/errors.hpp"

namespace metadiffub {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'F', 'B'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write checkpoint " + path.string());
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw Error("failed writing checkpoint " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ParseError("cannot open checkpoint " + path.string());
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) fail("string length out of range");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  [[noreturn]] void fail(const std::string& why) {
    throw ParseError("checkpoint " + path_.string() + ": " + why);
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& require(const Checkpoint& c, const std::string& key) {
  auto it = c.config.find(key);
  if (it == c.config.end()) throw ParseError("checkpoint is missing config key " + key);
  return it->second;
}

std::size_t get_size(const Checkpoint& c, const std::string& key) { return std::stoull(require(c, key)); }
double get_double(const Checkpoint& c, const std::string& key) { return std::stod(require(c, key)); }
bool get_bool(const Checkpoint& c, const std::string& key) { return require(c, key) == "true"; }

void check_params(const ParamSet& expected, const ParamSet& loaded, const std::string& kind) {
  if (!expected.compatible(loaded)) throw ParseError(kind + " checkpoint weights do not match its config");
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(ckpt.kind);
  w.u64(ckpt.config.size());
  for (const auto& [k, v] : ckpt.config) {
    w.str(k);
    w.str(v);
  }
  w.u64(ckpt.vocab.size());
  for (const auto& t : ckpt.vocab) w.str(t);
  w.str(ckpt.dataset_tag);
  w.u64(ckpt.params.size());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const NDArray& a = ckpt.params[i];
    w.str(ckpt.params.name(i));
    w.u64(a.shape().size());
    for (std::size_t d : a.shape()) w.u64(d);
    w.raw(a.data().data(), a.data().size() * sizeof(double));
  }
  w.finish(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  c.kind = r.str();
  const std::uint64_t n_config = r.u64();
  for (std::uint64_t i = 0; i < n_config; ++i) {
    std::string k = r.str();
    c.config[k] = r.str();
  }
  const std::uint64_t n_vocab = r.u64();
  for (std::uint64_t i = 0; i < n_vocab; ++i) c.vocab.push_back(r.str());
  c.dataset_tag = r.str();
  const std::uint64_t n_params = r.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const std::uint64_t ndim = r.u64();
    if (ndim > 8) r.fail("bad rank for " + name);
    Shape shape(ndim);
    for (auto& d : shape) d = r.u64();
    NDArray a(shape);
    r.raw(a.data().data(), a.data().size() * sizeof(double));
    c.params.add(std::move(name), std::move(a));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return c;
}

void save_exploiter(const std::filesystem::path& path, const Exploiter& model,
                    const std::string& dataset_tag) {
  const auto& cfg = model.config;
  Checkpoint c;
  c.kind = "exploiter";
  c.config = {{"vocab_size", std::to_string(cfg.vocab_size)},
              {"layers", std::to_string(cfg.layers)},
              {"heads", std::to_string(cfg.heads)},
              {"dim", std::to_string(cfg.dim)},
              {"ffn_mult", std::to_string(cfg.ffn_mult)},
              {"T", std::to_string(cfg.T)},
              {"max_len", std::to_string(cfg.max_len)},
              {"lambda", format_double(cfg.lambda)},
              {"rounding_loss", cfg.rounding_loss ? "true" : "false"},
              {"train_embeddings", cfg.train_embeddings ? "true" : "false"},
              {"embed_std", format_double(cfg.embed_std)},
              {"schedule_s", format_double(cfg.schedule_s)}};
  c.vocab = model.vocab.tokens();
  c.dataset_tag = dataset_tag;
  c.params = model.params;
  write_checkpoint(path, c);
}

Exploiter load_exploiter(const std::filesystem::path& path, std::string* dataset_tag) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != "exploiter") throw ParseError(path.string() + " holds a " + c.kind + ", not an exploiter");
  ExploiterConfig cfg;
  cfg.vocab_size = get_size(c, "vocab_size");
  cfg.layers = get_size(c, "layers");
  cfg.heads = get_size(c, "heads");
  cfg.dim = get_size(c, "dim");
  cfg.ffn_mult = get_size(c, "ffn_mult");
  cfg.T = get_size(c, "T");
  cfg.max_len = get_size(c, "max_len");
  cfg.lambda = get_double(c, "lambda");
  cfg.rounding_loss = get_bool(c, "rounding_loss");
  cfg.train_embeddings = get_bool(c, "train_embeddings");
  cfg.embed_std = get_double(c, "embed_std");
  cfg.schedule_s = get_double(c, "schedule_s");
  Vocab vocab = Vocab::from_tokens(c.vocab);
  if (vocab.size() != cfg.vocab_size) throw ParseError("exploiter checkpoint vocabulary size mismatch");
  RngStream rng(0);
  Exploiter shell = init_exploiter(cfg, vocab, rng);
  check_params(shell.params, c.params, "exploiter");
  if (dataset_tag) *dataset_tag = c.dataset_tag;
  return Exploiter{cfg, std::move(vocab), std::move(c.params)};
}

void save_scheduler(const std::filesystem::path& path, const Scheduler& scheduler,
                    const std::string& dataset_tag) {
  const auto& cfg = scheduler.config;
  Checkpoint c;
  c.kind = "scheduler";
  c.config = {{"vocab_size", std::to_string(cfg.vocab_size)},
              {"dim", std::to_string(cfg.dim)},
              {"hidden", std::to_string(cfg.hidden)},
              {"enc_max_len", std::to_string(cfg.enc_max_len)},
              {"T", std::to_string(cfg.T)},
              {"init_bias", format_double(cfg.init_bias)}};
  c.vocab = scheduler.vocab.tokens();
  c.dataset_tag = dataset_tag;
  c.params = scheduler.params;
  write_checkpoint(path, c);
}

Scheduler load_scheduler(const std::filesystem::path& path, std::string* dataset_tag) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != "scheduler") throw ParseError(path.string() + " holds a " + c.kind + ", not a scheduler");
  SchedulerConfig cfg;
  cfg.vocab_size = get_size(c, "vocab_size");
  cfg.dim = get_size(c, "dim");
  cfg.hidden = get_size(c, "hidden");
  cfg.enc_max_len = get_size(c, "enc_max_len");
  cfg.T = get_size(c, "T");
  cfg.init_bias = get_double(c, "init_bias");
  Vocab vocab = Vocab::from_tokens(c.vocab);
  if (vocab.size() != cfg.vocab_size) throw ParseError("scheduler checkpoint vocabulary size mismatch");
  RngStream rng(0);
  Scheduler shell = init_scheduler(cfg, vocab, rng);
  check_params(shell.params, c.params, "scheduler");
  if (dataset_tag) *dataset_tag = c.dataset_tag;
  return Scheduler{cfg, std::move(vocab), std::move(c.params)};
}

}  // namespace metadiffub
