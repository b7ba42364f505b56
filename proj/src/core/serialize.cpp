#include "core/serialize.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mstage::io {

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
public:
  Reader(std::string bytes, std::filesystem::path path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  uint32_t u32() {
    need(4, "header field");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<uint8_t>(bytes_[pos_ + static_cast<size_t>(i)]);
    pos_ += 4;
    return v;
  }

  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(size_t n) {
    need(n, "name bytes");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char* magic) {
    if (bytes_.size() < 4 || bytes_.compare(0, 4, magic) != 0) {
      std::string found = bytes_.substr(0, std::min<size_t>(4, bytes_.size()));
      fail(ErrorKind::Dependency, "bad magic in " + path_.string() + ": expected \"" + magic +
                                      "\", found \"" + found + "\"");
    }
    pos_ = 4;
  }

  void expect_version() {
    uint32_t v = u32();
    if (v != kFormatVersion) {
      std::ostringstream os;
      os << "unsupported format version " << v << " in " << path_.string();
      fail(ErrorKind::Dependency, os.str());
    }
  }

  bool at_end() const { return pos_ == bytes_.size(); }

  void need(size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      fail(ErrorKind::Dependency,
           "truncated payload in " + path_.string() + " while reading " + std::string(what));
  }

private:
  std::string bytes_;
  std::filesystem::path path_;
  size_t pos_ = 0;
};

std::string encode_matrix(const char* magic, const Tensor& m) {
  std::string out;
  out.reserve(16 + m.size() * 4);
  out.append(magic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(m.dim(0)));
  put_u32(out, static_cast<uint32_t>(m.dim(1)));
  for (size_t i = 0; i < m.size(); ++i) put_f32(out, static_cast<float>(m[i]));
  return out;
}

Tensor decode_matrix(const char* magic, const std::filesystem::path& path) {
  Reader r(read_file(path), path);
  r.expect_magic(magic);
  r.expect_version();
  size_t rows = r.u32();
  size_t cols = r.u32();
  if (rows == 0 || cols == 0)
    fail(ErrorKind::Dependency, "zero dimension in " + path.string());
  r.need(rows * cols * 4, "matrix payload");
  Tensor m({rows, cols});
  for (size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(r.f32());
  if (!r.at_end())
    fail(ErrorKind::Dependency, "trailing bytes in " + path.string());
  m.require_finite(path.string());
  return m;
}

void validate_prob_rows(const Tensor& probs, ErrorKind kind, const std::string& where) {
  size_t t_len = probs.dim(0), classes = probs.dim(1);
  for (size_t t = 0; t < t_len; ++t) {
    double sum = 0.0;
    for (size_t c = 0; c < classes; ++c) {
      double p = probs.at2(t, c);
      if (p < 0.0 || p > 1.0) fail(kind, "probability out of [0,1] in " + where);
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-6) {
      std::ostringstream os;
      os << "row " << t << " sums to " << sum << " in " << where;
      fail(kind, os.str());
    }
  }
}

}  // namespace

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "rename failed: " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Dependency, "cannot open file: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_feature_seq(const std::filesystem::path& path, const Tensor& feats) {
  if (feats.rank() != 2) fail(ErrorKind::InvalidArg, "feature sequence must be rank 2");
  atomic_write(path, encode_matrix("MSPF", feats));
}

Tensor read_feature_seq(const std::filesystem::path& path) {
  return decode_matrix("MSPF", path);
}

void write_prob_seq(const std::filesystem::path& path, const Tensor& probs) {
  if (probs.rank() != 2) fail(ErrorKind::InvalidArg, "probability sequence must be rank 2");
  validate_prob_rows(probs, ErrorKind::InvalidArg, "probability sequence for " + path.string());
  atomic_write(path, encode_matrix("MSPP", probs));
}

Tensor read_prob_seq(const std::filesystem::path& path) {
  Tensor probs = decode_matrix("MSPP", path);
  validate_prob_rows(probs, ErrorKind::Dependency, path.string());
  return probs;
}

void write_checkpoint(const std::filesystem::path& path, const ParamSet& ps) {
  std::string out;
  out.append("MSCK", 4);
  put_u32(out, kFormatVersion);
  for (const auto& p : ps.params()) {
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    out.append(p.name);
    put_u32(out, static_cast<uint32_t>(p.value.rank()));
    for (size_t d : p.value.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (size_t i = 0; i < p.value.size(); ++i)
      put_f32(out, static_cast<float>(p.value[i]));
  }
  atomic_write(path, out);
}

ParamSet read_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path), path);
  r.expect_magic("MSCK");
  r.expect_version();
  ParamSet ps;
  while (!r.at_end()) {
    uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    uint32_t rank = r.u32();
    if (rank == 0 || rank > 8)
      fail(ErrorKind::Dependency, "implausible tensor rank in " + path.string());
    std::vector<size_t> shape;
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape.push_back(r.u32());
      n *= shape.back();
    }
    r.need(n * 4, ("tensor payload of " + name).c_str());
    Tensor t(shape);
    for (size_t i = 0; i < n; ++i) t[i] = static_cast<double>(r.f32());
    ps.add(name, std::move(t));
  }
  return ps;
}

}  // namespace mstage::io
