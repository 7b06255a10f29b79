#include "limcal/synth_data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "limcal/errors.hpp"
#include "limcal/rng.hpp"

namespace limcal {

std::string_view to_string(Family family) {
  switch (family) {
    case Family::in_domain: return "in_domain";
    case Family::held_out: return "held_out";
    case Family::mixed: return "mixed";
  }
  return "unknown";
}

Family parse_family(std::string_view text) {
  if (text == "in_domain") return Family::in_domain;
  if (text == "held_out") return Family::held_out;
  if (text == "mixed") return Family::mixed;
  throw ConfigError("unknown family '" + std::string(text) + "'");
}

void TaskConfig::validate() const {
  if (colors < 2) throw ConfigError("task: need at least two colors");
  if (objects < 1 || objects > slots) {
    throw ConfigError("task: objects per scene must lie in [1, slots]");
  }
  if (in_domain_shapes > shapes) throw ConfigError("task: in_domain_shapes exceeds shapes");
  if (objects > in_domain_shapes || objects > shapes - in_domain_shapes) {
    throw ConfigError("task: " + std::to_string(objects) +
                      " distinct shapes per scene exceed a family's shape pool");
  }
  if (vocab::kShapeBase + shapes > vocab::kColorBase) {
    throw ConfigError("task: too many shapes for the text vocabulary layout");
  }
}

std::size_t TaskConfig::text_vocab_needed() const { return vocab::kColorBase + colors; }

std::size_t TaskConfig::image_vocab_needed() const { return 1 + shapes * colors; }

std::uint32_t TaskConfig::image_token(std::size_t shape, std::size_t color) const {
  return static_cast<std::uint32_t>(1 + shape * colors + color);
}

TokenIds Example::text() const {
  TokenIds out = caption_tokens;
  out.insert(out.end(), question_tokens.begin(), question_tokens.end());
  return out;
}

namespace {

std::vector<std::uint32_t> family_pool(const TaskConfig& task, Family family) {
  std::vector<std::uint32_t> pool;
  const std::size_t lo = family == Family::held_out ? task.in_domain_shapes : 0;
  const std::size_t hi = family == Family::in_domain ? task.in_domain_shapes : task.shapes;
  for (std::size_t s = lo; s < hi; ++s) pool.push_back(static_cast<std::uint32_t>(s));
  return pool;
}

Example sample_example(Rng& rng, const TaskConfig& task, std::vector<std::uint32_t> pool,
                       std::uint32_t answer) {
  // Partial Fisher-Yates: the first K entries become the scene, in caption order.
  for (std::size_t i = 0; i < task.objects; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<SceneObject> objects(task.objects);
  for (std::size_t i = 0; i < task.objects; ++i) {
    objects[i].shape = pool[i];
    objects[i].color = static_cast<std::uint32_t>(rng.below(task.colors));
  }
  const std::size_t queried = static_cast<std::size_t>(rng.below(task.objects));
  objects[queried].color = answer;

  Example ex;
  ex.answer = answer;
  for (const auto& o : objects) {
    ex.caption_tokens.push_back(vocab::kShapeBase + o.shape);
    ex.caption_tokens.push_back(vocab::kColorBase + o.color);
  }
  ex.question_tokens = {vocab::kWhat, vocab::kColor, vocab::kIs,
                        vocab::kShapeBase + objects[queried].shape, vocab::kQuestionMark};

  // Objects occupy random distinct slots; the layout is independent of caption order.
  std::vector<std::size_t> slots(task.slots);
  std::iota(slots.begin(), slots.end(), 0);
  rng.shuffle(std::span<std::size_t>(slots));
  ex.image_tokens.assign(task.slots, vocab::kBlankImage);
  for (std::size_t i = 0; i < task.objects; ++i) {
    ex.image_tokens[slots[i]] = task.image_token(objects[i].shape, objects[i].color);
  }
  return ex;
}

Dataset generate_split(Rng& rng, const TaskConfig& task, std::size_t size, Family family,
                       std::set<std::string>& seen) {
  Dataset out;
  out.family = family;
  std::vector<std::uint32_t> answers(size);
  for (std::size_t i = 0; i < size; ++i) answers[i] = static_cast<std::uint32_t>(i % task.colors);
  rng.shuffle(std::span<std::uint32_t>(answers));
  for (std::size_t i = 0; i < size; ++i) {
    // Mixed splits alternate families so both are equally represented.
    const Family f =
        family == Family::mixed ? (i % 2 == 0 ? Family::in_domain : Family::held_out) : family;
    const auto pool = family_pool(task, f);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw ConfigError("task: cannot draw enough distinct examples");
      Example ex = sample_example(rng, task, pool, answers[i]);
      if (seen.insert(format_example(ex)).second) {
        out.examples.push_back(std::move(ex));
        break;
      }
    }
  }
  return out;
}

}  // namespace

DatasetSplit gen_dataset(std::uint64_t seed, const TaskConfig& task, const SplitSizes& sizes,
                         Family family) {
  task.validate();
  if (sizes.train == 0 || sizes.validation == 0 || sizes.test == 0) {
    throw ConfigError("dataset split sizes must be positive");
  }
  Rng rng(seed);
  std::set<std::string> seen;
  DatasetSplit split;
  split.train = generate_split(rng, task, sizes.train, family, seen);
  split.validation = generate_split(rng, task, sizes.validation, family, seen);
  split.test = generate_split(rng, task, sizes.test, family, seen);
  return split;
}

namespace {

bool is_shape(std::uint32_t tok, const TaskConfig& task) {
  return tok >= vocab::kShapeBase && tok < vocab::kShapeBase + task.shapes;
}

bool is_color(std::uint32_t tok, const TaskConfig& task) {
  return tok >= vocab::kColorBase && tok < vocab::kColorBase + task.colors;
}

std::uint32_t queried_shape(const Example& ex, const TaskConfig& task) {
  const auto& q = ex.question_tokens;
  if (q.size() != 5 || q[0] != vocab::kWhat || q[1] != vocab::kColor || q[2] != vocab::kIs ||
      !is_shape(q[3], task) || q[4] != vocab::kQuestionMark) {
    throw ParseError("question is not of the form 'what color is <shape> ?'");
  }
  return q[3] - vocab::kShapeBase;
}

}  // namespace

std::uint32_t text_answer_oracle(const Example& ex, const TaskConfig& task) {
  const std::uint32_t shape = queried_shape(ex, task);
  const auto& cap = ex.caption_tokens;
  if (cap.empty() || cap.size() % 2 != 0) throw ParseError("caption must be (shape, color) pairs");
  for (std::size_t i = 0; i < cap.size(); i += 2) {
    if (!is_shape(cap[i], task) || !is_color(cap[i + 1], task)) {
      throw ParseError("caption pair " + std::to_string(i / 2) + " is not (shape, color)");
    }
  }
  for (std::size_t i = 0; i < cap.size(); i += 2) {
    if (cap[i] - vocab::kShapeBase == shape) return cap[i + 1] - vocab::kColorBase;
  }
  throw ParseError("caption does not mention the queried shape");
}

std::uint32_t image_answer_oracle(const Example& ex, const TaskConfig& task) {
  const std::uint32_t shape = queried_shape(ex, task);
  for (auto tok : ex.image_tokens) {
    if (tok == vocab::kBlankImage) continue;
    const std::uint32_t obj = tok - 1;
    if (obj / task.colors == shape) return static_cast<std::uint32_t>(obj % task.colors);
  }
  throw ParseError("image does not contain the queried shape");
}

namespace {

void append_ids(std::string& out, const TokenIds& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
}

TokenIds parse_ids(std::string_view text, std::string_view field) {
  TokenIds out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view item =
        text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    std::uint32_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw ParseError("bad id '" + std::string(item) + "' in field " + std::string(field));
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string_view take_field(std::string_view& rest, std::string_view prefix) {
  if (rest.substr(0, prefix.size()) != prefix) {
    throw ParseError("expected field '" + std::string(prefix) + "'");
  }
  rest.remove_prefix(prefix.size());
  const std::size_t space = rest.find(' ');
  const std::string_view value = rest.substr(0, space);
  rest = space == std::string_view::npos ? std::string_view() : rest.substr(space + 1);
  return value;
}

}  // namespace

std::string format_example(const Example& ex) {
  std::string out = "img=";
  append_ids(out, ex.image_tokens);
  out += " cap=";
  append_ids(out, ex.caption_tokens);
  out += " q=";
  append_ids(out, ex.question_tokens);
  out += " y=" + std::to_string(ex.answer);
  return out;
}

Example parse_example(std::string_view line) {
  std::string_view rest = line;
  Example ex;
  ex.image_tokens = parse_ids(take_field(rest, "img="), "img");
  ex.caption_tokens = parse_ids(take_field(rest, "cap="), "cap");
  ex.question_tokens = parse_ids(take_field(rest, "q="), "q");
  const TokenIds y = parse_ids(take_field(rest, "y="), "y");
  if (y.size() != 1) throw ParseError("field y must hold exactly one id");
  if (!rest.empty()) throw ParseError("trailing content after field y");
  ex.answer = y[0];
  return ex;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& ex : data.examples) out << format_example(ex) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, Family family) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset out;
  out.family = family;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    try {
      out.examples.push_back(parse_example(line));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace limcal
