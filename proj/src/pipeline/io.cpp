#include "draftrevise/pipeline/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "draftrevise/errors.hpp"

namespace draftrevise::pipeline {

using rq::Code;

namespace {

// Little-endian writers independent of host byte order.
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  bool done() const { return pos_ == data_.size(); }

  std::string bytes(std::size_t n) {
    if (data_.size() - pos_ < n) throw IoError(path_ + ": truncated file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    const std::string b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string str() { return bytes(u32()); }

  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path);
  return buf.str();
}

void write_binary(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.close();
  if (!out) throw IoError("write failed for " + path);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw IoError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_ppm(const std::string& path, const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm: expected 3 channels");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_binary(path, out);
}

Image read_ppm(const std::string& path) {
  const std::string data = read_binary(path);
  std::size_t pos = 0;
  // header tokens separated by whitespace, '#' comments allowed
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  auto number = [&]() {
    const std::string t = token();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw IoError(path + ": bad PPM header");
    return v;
  };
  if (token() != "P6") throw IoError(path + ": not a binary PPM (P6)");
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  if (data.size() < pos || data.size() - pos != w * h * 3) throw IoError(path + ": raster size mismatch");
  Image img(h, w, 3);
  for (std::size_t i = 0; i < w * h * 3; ++i) {
    img.pixels[i] = static_cast<unsigned char>(data[pos + i]) / 255.0;
  }
  return img;
}

void write_code_maps(const std::string& path, const std::vector<CodeStackMap>& maps) {
  std::string out;
  for (const auto& m : maps) {
    out += "RQCM";
    put_u32(out, kCodeMapVersion);
    put_u32(out, checked_u32(m.height(), "height"));
    put_u32(out, checked_u32(m.width(), "width"));
    put_u32(out, checked_u32(m.depth(), "depth"));
    put_u32(out, checked_u32(m.codebook_size(), "codebook size"));
    for (Code c : m.codes()) put_u32(out, c);
  }
  write_binary(path, out);
}

void write_code_map(const std::string& path, const CodeStackMap& map) { write_code_maps(path, {map}); }

std::vector<CodeStackMap> read_code_maps(const std::string& path) {
  Reader r(read_binary(path), path);
  std::vector<CodeStackMap> maps;
  while (!r.done()) {
    if (r.bytes(4) != "RQCM") throw IoError(path + ": bad code-map magic");
    const std::uint32_t version = r.u32();
    if (version != kCodeMapVersion) {
      throw IoError(path + ": code-map version " + std::to_string(version) + ", expected " +
                    std::to_string(kCodeMapVersion));
    }
    const std::size_t h = r.u32(), w = r.u32(), d = r.u32(), k = r.u32();
    if (h == 0 || w == 0 || d == 0 || k == 0) throw IoError(path + ": empty code-map dimensions");
    CodeStackMap m(h, w, d, k);
    for (std::size_t n = 0; n < h * w; ++n) {
      for (std::size_t j = 0; j < d; ++j) {
        const Code c = r.u32();
        if (c >= k && c != rq::kMaskCode) throw IoError(path + ": code out of range");
        m.set(n, j, c);
      }
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

CodeStackMap read_code_map(const std::string& path) {
  auto maps = read_code_maps(path);
  if (maps.size() != 1) throw IoError(path + ": expected one code map, found " + std::to_string(maps.size()));
  return std::move(maps.front());
}

void Checkpoint::add(const std::string& name, const numeric::Tensor& t) {
  if (has(name)) throw std::invalid_argument("checkpoint: duplicate section " + name);
  Section s{name, t.shape(), {}};
  s.values.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) s.values.push_back(static_cast<float>(t.data()[i]));
  sections.push_back(std::move(s));
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(sections.begin(), sections.end(), [&](const Section& s) { return s.name == name; });
}

numeric::Tensor Checkpoint::tensor(const std::string& name, const numeric::Shape& shape) const {
  for (const auto& s : sections) {
    if (s.name != name) continue;
    if (s.shape != shape) {
      throw ConfigError("checkpoint section " + name + " has shape " + numeric::shape_string(s.shape) +
                        ", model expects " + numeric::shape_string(shape));
    }
    return numeric::Tensor(shape, std::vector<double>(s.values.begin(), s.values.end()));
  }
  throw ConfigError("checkpoint has no section " + name);
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw IoError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::string out = "RQCK";
  put_u32(out, kCheckpointVersion);
  put_string(out, config_text);
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";
  put_string(out, meta_text);
  put_u32(out, checked_u32(sections.size(), "section count"));
  for (const auto& s : sections) {
    put_string(out, s.name);
    put_u32(out, checked_u32(s.shape.size(), "rank"));
    for (std::size_t d : s.shape) put_u32(out, checked_u32(d, "dimension"));
    for (float f : s.values) put_f32(out, f);
  }
  write_binary(path, out);
}

Checkpoint Checkpoint::load(const std::string& path) {
  Reader r(read_binary(path), path);
  if (r.bytes(4) != "RQCK") throw IoError(path + ": not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                  std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config_text = r.str();
  std::istringstream meta(r.str());
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path + ": bad metadata line");
    ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s;
    s.name = r.str();
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) s.shape.push_back(r.u32());
    const std::size_t n = numeric::shape_size(s.shape);
    s.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) s.values[j] = r.f32();
    ck.sections.push_back(std::move(s));
  }
  if (!r.done()) throw IoError(path + ": trailing bytes after checkpoint");
  return ck;
}

numeric::ConstParameterRefs as_const(const numeric::ParameterRefs& params) {
  return numeric::ConstParameterRefs(params.begin(), params.end());
}

void store_parameters(Checkpoint& ck, numeric::ConstParameterRefs params) {
  for (const auto* p : params) ck.add(p->name, p->value);
}

void load_parameters(const Checkpoint& ck, numeric::ParameterRefs params) {
  for (auto* p : params) p->value = ck.tensor(p->name, p->value.shape());
}

void store_optimizer(Checkpoint& ck, numeric::ConstParameterRefs params,
                     const numeric::OptimizerState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.add("adam.m." + params[i]->name, state.first_moment.at(i));
    ck.add("adam.v." + params[i]->name, state.second_moment.at(i));
  }
  ck.meta["optimizer_step"] = std::to_string(state.step);
}

void load_optimizer(const Checkpoint& ck, numeric::ConstParameterRefs params,
                    numeric::OptimizerState& state) {
  state.first_moment.clear();
  state.second_moment.clear();
  for (const auto* p : params) {
    state.first_moment.push_back(ck.tensor("adam.m." + p->name, p->value.shape()));
    state.second_moment.push_back(ck.tensor("adam.v." + p->name, p->value.shape()));
  }
  state.step = std::stoull(ck.meta_value("optimizer_step"));
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) { write_binary(path, text); }

std::string read_text(const std::string& path) { return read_binary(path); }

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

}  // namespace draftrevise::pipeline
