#include <algorithm>
#include <map>
#include <sstream>

#include "ugg/errors.hpp"
#include "ugg/fileio.hpp"
#include "ugg/objective.hpp"
#include "ugg/text.hpp"

namespace ugg::objective {

namespace {

constexpr std::size_t kHistoryCols = 3 + 3 * kModalityCount + 1;

std::string kv_block(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_kv_block(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("UGGC: malformed config line '" + std::string(line) + "'");
    kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return kv;
}

void put_matrix(std::string& out, const std::string& name, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  for (double v : m.values()) put_f64(out, v);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void need(std::uint64_t n) const {
    if (n > bytes_.size() - at_) {
      throw Truncated("UGGC: truncated at byte " + std::to_string(at_) + " (need " + std::to_string(n) +
                      " more, have " + std::to_string(bytes_.size() - at_) + ")");
    }
  }
  std::uint32_t u32() {
    need(4);
    const auto v = get_u32(bytes_, at_);
    at_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    const auto v = get_u64(bytes_, at_);
    at_ += 8;
    return v;
  }
  std::string_view take(std::uint64_t n) {
    need(n);
    const auto v = bytes_.substr(at_, n);
    at_ += n;
    return v;
  }
  Matrix matrix(std::uint64_t rows, std::uint64_t cols) {
    if (cols != 0 && rows > (bytes_.size() / 8) / cols) throw Truncated("UGGC: matrix larger than the file");
    need(rows * cols * 8);
    Matrix m(rows, cols);
    for (double& v : m.values()) {
      v = get_f64(bytes_, at_);
      at_ += 8;
    }
    return m;
  }
  bool done() const { return at_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t at_ = 0;
};

std::uint64_t state_uint(const std::map<std::string, std::string>& state, const std::string& key) {
  const auto it = state.find(key);
  if (it == state.end()) throw FormatError("UGGC: state block lacks '" + key + "'");
  try {
    return parse_uint(key, it->second);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("UGGC: ") + e.what());
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> config = ckpt.snapshot;
  for (auto& [k, v] : to_entries(ckpt.model.config)) config[k] = v;
  const std::map<std::string, std::string> state = {
      {"adam.step", std::to_string(ckpt.adam.step)},
      {"epoch", std::to_string(ckpt.epoch)},
      {"model.classes", std::to_string(ckpt.model.num_classes)},
      {"model.dim", std::to_string(ckpt.model.dim)},
  };
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string cfg_text = kv_block(config);
  put_u64(out, cfg_text.size());
  out += cfg_text;
  const std::string state_text = kv_block(state);
  put_u64(out, state_text.size());
  out += state_text;

  const auto& params = ckpt.model.params.entries();
  const auto& buffers = ckpt.model.buffers.entries();
  put_u32(out, static_cast<std::uint32_t>(3 * params.size() + buffers.size() + 1));
  for (const auto& [name, m] : params) put_matrix(out, "param/" + name, m);
  for (const auto& [name, m] : buffers) put_matrix(out, "buffer/" + name, m);
  for (const auto& [name, _] : params) put_matrix(out, "adam.m/" + name, ckpt.adam.m.at(name));
  for (const auto& [name, _] : params) put_matrix(out, "adam.v/" + name, ckpt.adam.v.at(name));
  Matrix hist(ckpt.history.size(), kHistoryCols);
  for (std::size_t r = 0; r < ckpt.history.size(); ++r) {
    const HistoryRow& h = ckpt.history[r];
    std::size_t c = 0;
    hist(r, c++) = static_cast<double>(h.step);
    hist(r, c++) = h.loss.ce;
    hist(r, c++) = h.loss.tri;
    for (double v : h.loss.kl_cs) hist(r, c++) = v;
    for (double v : h.loss.routing) hist(r, c++) = v;
    for (double v : h.loss.balance) hist(r, c++) = v;
    hist(r, c++) = h.loss.total;
  }
  put_matrix(out, "history", hist);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4) throw Truncated("UGGC: file shorter than the magic");
  if (!std::equal(bytes.begin(), bytes.begin() + 4, kCheckpointMagic)) {
    throw BadMagic("UGGC: bad magic '" + std::string(bytes.substr(0, 4)) + "'");
  }
  Reader in(bytes.substr(4));
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("UGGC: version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const std::map<std::string, std::string> config = parse_kv_block(in.take(in.u64()));
  const std::map<std::string, std::string> state = parse_kv_block(in.take(in.u64()));

  std::map<std::string, Matrix> mats;
  std::vector<std::string> order;
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(in.take(in.u32()));
    const std::uint64_t rows = in.u64();
    const std::uint64_t cols = in.u64();
    Matrix m = in.matrix(rows, cols);
    if (!mats.emplace(name, std::move(m)).second) throw FormatError("UGGC: duplicate matrix '" + name + "'");
    order.push_back(name);
  }
  if (!in.done()) throw FormatError("UGGC: trailing bytes after the matrix table");

  TrainConfig cfg;
  try {
    for (const auto& [k, v] : config) apply_entry(cfg, k, v);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("UGGC: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.snapshot = config;
  ckpt.epoch = state_uint(state, "epoch");
  ckpt.adam.step = state_uint(state, "adam.step");
  Model expect;
  try {
    expect = init_model(cfg, state_uint(state, "model.dim"), state_uint(state, "model.classes"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("UGGC: ") + e.what());
  }
  auto fetch = [&](const std::string& name, const Matrix& like) {
    const auto it = mats.find(name);
    if (it == mats.end()) throw FormatError("UGGC: missing matrix '" + name + "'");
    if (!it->second.same_shape(like)) {
      throw FormatError("UGGC: matrix '" + name + "' has shape " + it->second.shape_string() + ", expected " +
                        like.shape_string());
    }
    return it->second;
  };
  ckpt.model = expect;
  ckpt.adam.m = expect.params.zeros_like();
  ckpt.adam.v = expect.params.zeros_like();
  for (auto& [name, w] : ckpt.model.params.entries()) {
    const Matrix like = w;
    w = fetch("param/" + name, like);
    ckpt.adam.m.at(name) = fetch("adam.m/" + name, like);
    ckpt.adam.v.at(name) = fetch("adam.v/" + name, like);
  }
  for (auto& [name, b] : ckpt.model.buffers.entries()) b = fetch("buffer/" + name, b);
  const std::size_t expected_count = 3 * ckpt.model.params.size() + ckpt.model.buffers.size() + 1;
  if (count != expected_count) throw FormatError("UGGC: unexpected matrices in the file");

  const auto hit = mats.find("history");
  if (hit == mats.end()) throw FormatError("UGGC: missing matrix 'history'");
  const Matrix& hist = hit->second;
  if (hist.rows() > 0 && hist.cols() != kHistoryCols) throw FormatError("UGGC: history has wrong width");
  for (std::size_t r = 0; r < hist.rows(); ++r) {
    HistoryRow h;
    std::size_t c = 0;
    h.step = static_cast<std::uint64_t>(hist(r, c++));
    h.loss.ce = hist(r, c++);
    h.loss.tri = hist(r, c++);
    for (double& v : h.loss.kl_cs) v = hist(r, c++);
    for (double& v : h.loss.routing) v = hist(r, c++);
    for (double& v : h.loss.balance) v = hist(r, c++);
    h.loss.total = hist(r, c++);
    ckpt.history.push_back(h);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_locked(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace ugg::objective
