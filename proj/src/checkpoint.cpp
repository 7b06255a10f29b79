#include "limcal/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "limcal/config_file.hpp"
#include "limcal/digest.hpp"
#include "limcal/errors.hpp"

namespace limcal {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  void tensor(const std::string& name, const Matrix& m) {
    str(name);
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}

  std::string_view take(std::size_t n, std::string_view what) {
    if (in_.size() - pos_ < n) throw ParseError("checkpoint truncated while reading " + std::string(what));
    const std::string_view out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(std::string_view what) {
    const auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }
  std::string str(std::string_view what) { return std::string(take(u32(what), what)); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string backbone_config_text(const BackboneParams& p) {
  const BackboneConfig& c = p.config;
  KeyValues kv;
  kv.set("vocab_text", std::to_string(c.vocab_text));
  kv.set("vocab_image", std::to_string(c.vocab_image));
  kv.set("dim", std::to_string(c.dim));
  kv.set("slots", std::to_string(c.slots));
  kv.set("max_text_len", std::to_string(c.max_text_len));
  kv.set("layers", std::to_string(c.layers));
  kv.set("heads", std::to_string(c.heads));
  kv.set("ffn_mult", std::to_string(c.ffn_mult));
  kv.set("choices", std::to_string(c.choices));
  kv.set("frozen", p.frozen() ? "true" : "false");
  return kv.serialize();
}

std::string lim_config_text(const LimParams& p) {
  const LimConfig& c = p.config;
  KeyValues kv;
  kv.set("slots", std::to_string(c.slots));
  kv.set("dim", std::to_string(c.dim));
  kv.set("layers", std::to_string(c.layers));
  kv.set("heads", std::to_string(c.heads));
  kv.set("ffn_mult", std::to_string(c.ffn_mult));
  kv.set("pe_max_len", std::to_string(c.pe_max_len));
  kv.set("projected", c.projected ? "true" : "false");
  return kv.serialize();
}

template <typename Params>
void write_section(Writer& w, std::string_view name, const std::string& config,
                   const Params& params) {
  w.str(name);
  w.str(config);
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const Matrix&) { ++count; });
  w.u32(count);
  params.for_each([&](const std::string& n, const Matrix& m) { w.tensor(n, m); });
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ParseError("checkpoint: " + msg);
}

KeyValues read_config(std::string_view text, std::string_view section,
                      const std::set<std::string, std::less<>>& keys) {
  KeyValues kv = KeyValues::parse(text, "checkpoint section " + std::string(section));
  for (const auto& k : keys) require(kv.contains(k), std::string(section) + " config lacks " + k);
  try {
    kv.reject_unknown(keys);
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  return kv;
}

template <typename Params>
void read_tensors(Reader& r, std::string_view section, Params& params) {
  std::size_t expected = 0;
  params.for_each([&](const std::string&, const Matrix&) { ++expected; });
  const std::uint32_t count = r.u32("tensor count");
  require(count == expected, std::string(section) + " holds " + std::to_string(count) +
                                 " tensors, config implies " + std::to_string(expected));
  Params::visit(params, [&](const std::string& name, Matrix& m) {
    const std::string stored = r.str("tensor name");
    require(stored == name, "expected tensor " + name + ", found " + stored);
    const std::uint32_t rows = r.u32("tensor rows"), cols = r.u32("tensor cols");
    require(rows == m.rows() && cols == m.cols(),
            "tensor " + name + " stored as " + std::to_string(rows) + "x" + std::to_string(cols) +
                ", config implies " + shape_string(m));
    for (double& v : m.values()) {
      v = static_cast<double>(std::bit_cast<float>(r.u32("tensor values")));
      require(std::isfinite(v), "tensor " + name + " holds a non-finite value");
    }
  });
}

BackboneParams read_backbone(Reader& r, std::string_view config_text) {
  const KeyValues kv = read_config(config_text, "backbone",
                                   {"vocab_text", "vocab_image", "dim", "slots", "max_text_len",
                                    "layers", "heads", "ffn_mult", "choices", "frozen"});
  BackboneConfig c;
  bool frozen = false;
  kv.read("vocab_text", c.vocab_text);
  kv.read("vocab_image", c.vocab_image);
  kv.read("dim", c.dim);
  kv.read("slots", c.slots);
  kv.read("max_text_len", c.max_text_len);
  kv.read("layers", c.layers);
  kv.read("heads", c.heads);
  kv.read("ffn_mult", c.ffn_mult);
  kv.read("choices", c.choices);
  kv.read("frozen", frozen);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint backbone config: ") + e.what());
  }
  BackboneParams p = init_backbone(c, 0);
  read_tensors(r, "backbone", p);
  if (frozen) p.freeze();
  return p;
}

LimParams read_lim(Reader& r, std::string_view section, std::string_view config_text) {
  const KeyValues kv = read_config(
      config_text, section, {"slots", "dim", "layers", "heads", "ffn_mult", "pe_max_len", "projected"});
  LimConfig c;
  kv.read("slots", c.slots);
  kv.read("dim", c.dim);
  kv.read("layers", c.layers);
  kv.read("heads", c.heads);
  kv.read("ffn_mult", c.ffn_mult);
  kv.read("pe_max_len", c.pe_max_len);
  kv.read("projected", c.projected);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ParseError("checkpoint " + std::string(section) + " config: " + e.what());
  }
  LimParams p = init_lim(c, 0);
  read_tensors(r, section, p);
  return p;
}

}  // namespace

std::string to_bytes(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.backbone.has_value() + ckpt.lim.has_value() +
                                   ckpt.lim_mse.has_value()));
  if (ckpt.backbone) write_section(w, "backbone", backbone_config_text(*ckpt.backbone), *ckpt.backbone);
  if (ckpt.lim) write_section(w, "lim", lim_config_text(*ckpt.lim), *ckpt.lim);
  if (ckpt.lim_mse) write_section(w, "lim_mse", lim_config_text(*ckpt.lim_mse), *ckpt.lim_mse);
  Fnv1a h;
  h.bytes(w.bytes().data(), w.bytes().size());
  w.u64(h.value());
  return std::move(w.bytes());
}

Checkpoint from_bytes(std::string_view bytes) {
  require(bytes.size() >= kCheckpointMagic.size() + 8 + 8, "file too short");
  require(bytes.substr(0, kCheckpointMagic.size()) == kCheckpointMagic, "bad magic");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Fnv1a h;
  h.bytes(body.data(), body.size());
  std::uint64_t stored = 0;
  for (int i = 7; i >= 0; --i) {
    stored = (stored << 8) | static_cast<unsigned char>(bytes[body.size() + static_cast<std::size_t>(i)]);
  }
  require(stored == h.value(), "digest mismatch (file corrupted)");

  Reader r(body.substr(kCheckpointMagic.size()));
  const std::uint32_t version = r.u32("version");
  require(version == kCheckpointVersion, "unsupported version " + std::to_string(version));
  const std::uint32_t sections = r.u32("section count");
  Checkpoint ckpt;
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::string name = r.str("section name");
    const std::string config = r.str("section config");
    if (name == "backbone" && !ckpt.backbone) {
      ckpt.backbone = read_backbone(r, config);
    } else if (name == "lim" && !ckpt.lim) {
      ckpt.lim = read_lim(r, name, config);
    } else if (name == "lim_mse" && !ckpt.lim_mse) {
      ckpt.lim_mse = read_lim(r, name, config);
    } else {
      throw ParseError("checkpoint: unexpected or repeated section '" + name + "'");
    }
  }
  require(r.done(), "trailing bytes after the last section");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = to_bytes(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return from_bytes(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace limcal
