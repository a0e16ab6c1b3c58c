#include "ernn/model_file.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ernn/errors.hpp"

namespace ernn::io {

using rnn::CellType;
using rnn::Role;

namespace {

constexpr char kMagic[4] = {'E', 'R', 'N', 'N'};
constexpr std::uint8_t kHasReadout = 1;
constexpr std::uint8_t kHasQuant = 2;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint64_t v) {
    if (v > 0xffffffffu) throw FormatError("value too large for a 32-bit field");
    uint(static_cast<std::uint32_t>(v));
  }
  void u64(std::uint64_t v) { uint(v); }
  void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("model file is truncated");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T uint() {
    const auto b = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>(v | (static_cast<T>(b[i]) << (8 * i)));
    return v;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return uint<std::uint16_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t expected) {
    const auto n = u64();
    if (n != expected) throw FormatError("record length does not match its shape");
    if (n > remaining() / 8) throw FormatError("model file is truncated");
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// Shapes of every matrix and vector in file order, derived from the
// dimension table.
struct MatrixSlot {
  std::uint32_t layer;
  Role role;
  std::size_t rows, cols;
  BlockCirculantMatrix* target;
};
struct VectorSlot {
  std::uint32_t layer;
  Role role;
  std::vector<double>* target;
};

void collect(rnn::ModelParams& m, std::vector<MatrixSlot>& mats, std::vector<VectorSlot>& vecs) {
  const auto layers = static_cast<std::uint32_t>(m.layers.size());
  for (std::uint32_t l = 0; l < layers; ++l) {
    if (auto* p = std::get_if<rnn::LstmParams>(&m.layers[l])) {
      mats.push_back({l, Role::kLstmGates, 4 * p->cell_dim, p->input_dim + p->output_dim, &p->gates});
      if (p->has_projection) mats.push_back({l, Role::kLstmProjection, p->output_dim, p->cell_dim, &p->projection});
      vecs.push_back({l, Role::kPeepholeI, &p->peephole_i});
      vecs.push_back({l, Role::kPeepholeF, &p->peephole_f});
      vecs.push_back({l, Role::kPeepholeO, &p->peephole_o});
      vecs.push_back({l, Role::kBiasI, &p->bias_i});
      vecs.push_back({l, Role::kBiasF, &p->bias_f});
      vecs.push_back({l, Role::kBiasG, &p->bias_g});
      vecs.push_back({l, Role::kBiasO, &p->bias_o});
    } else {
      auto& g = std::get<rnn::GruParams>(m.layers[l]);
      mats.push_back({l, Role::kGruGates, 2 * g.hidden_dim, g.input_dim + g.hidden_dim, &g.gates});
      mats.push_back({l, Role::kGruCandidateInput, g.hidden_dim, g.input_dim, &g.candidate_input});
      mats.push_back({l, Role::kGruCandidateState, g.hidden_dim, g.hidden_dim, &g.candidate_state});
      vecs.push_back({l, Role::kBiasR, &g.bias_r});
      vecs.push_back({l, Role::kBiasZ, &g.bias_z});
      vecs.push_back({l, Role::kBiasCandidate, &g.bias_candidate});
    }
  }
  if (m.readout) {
    mats.push_back({layers, Role::kReadout, m.readout->weights.rows(), m.readout->weights.cols(), &m.readout->weights});
    vecs.push_back({layers, Role::kReadoutBias, &m.readout->bias});
  }
}

std::size_t vector_length(const rnn::ModelParams& m, const VectorSlot& v) {
  if (v.role == Role::kReadoutBias) return m.readout->weights.rows();
  if (const auto* p = std::get_if<rnn::LstmParams>(&m.layers[v.layer])) return p->cell_dim;
  return std::get<rnn::GruParams>(m.layers[v.layer]).hidden_dim;
}

void write_format(Writer& w, const quant::FixedPointFormat& f) {
  f.validate();
  int e = 0;
  std::frexp(f.scale, &e);
  w.u8(static_cast<std::uint8_t>(f.total_bits));
  w.u8(static_cast<std::uint8_t>(f.frac_bits));
  w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(e - 1)));
}

quant::FixedPointFormat read_format(Reader& r) {
  quant::FixedPointFormat f;
  f.total_bits = r.u8();
  f.frac_bits = r.u8();
  f.scale = std::ldexp(1.0, static_cast<std::int16_t>(r.u16()));
  try {
    f.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad fixed-point format: ") + e.what());
  }
  return f;
}

std::string header_text(const ModelFile& f) {
  const auto& m = f.model;
  std::ostringstream os;
  os << "ernn model v" << kFormatVersion << "\n";
  os << "cell=" << (m.cell == CellType::kLstm ? "lstm" : "gru") << "\n";
  os << "input=" << m.input_dim() << "\n";
  std::string hidden, proj;
  for (const auto& layer : m.layers) {
    if (!hidden.empty()) {
      hidden += ",";
      proj += ",";
    }
    if (const auto* p = std::get_if<rnn::LstmParams>(&layer)) {
      hidden += std::to_string(p->cell_dim);
      proj += std::to_string(p->has_projection ? p->output_dim : 0);
    } else {
      hidden += std::to_string(std::get<rnn::GruParams>(layer).hidden_dim);
      proj += "0";
    }
  }
  os << "hidden=" << hidden << "\nprojection=" << proj << "\n";
  os << "readout=" << (m.readout ? m.readout->weights.rows() : 0) << "\n";
  if (f.quant_plan)
    os << "quantized=" << f.quant_plan->config.weight_bits << "/" << f.quant_plan->config.data_bits << "/"
       << f.quant_plan->config.pwl_segments << "\n";
  else
    os << "quantized=none\n";
  return os.str();
}

std::uint32_t checksum(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, a.data(), static_cast<uInt>(a.size()));
  crc = crc32(crc, b.data(), static_cast<uInt>(b.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> payload(const ModelFile& f) {
  f.model.validate();
  auto model = f.model;
  std::vector<MatrixSlot> mats;
  std::vector<VectorSlot> vecs;
  collect(model, mats, vecs);

  Writer w;
  w.u8(static_cast<std::uint8_t>(model.cell));
  w.u8(static_cast<std::uint8_t>((model.readout ? kHasReadout : 0) | (f.quant_plan ? kHasQuant : 0)));
  w.u32(model.input_dim());
  w.u32(model.layers.size());
  for (const auto& layer : model.layers) {
    if (const auto* p = std::get_if<rnn::LstmParams>(&layer)) {
      w.u32(p->cell_dim);
      w.u32(p->has_projection ? p->output_dim : 0);
      w.u8(static_cast<std::uint8_t>(p->cell_input));
    } else {
      w.u32(std::get<rnn::GruParams>(layer).hidden_dim);
      w.u32(0);
      w.u8(0);
    }
  }
  w.u32(model.readout ? model.readout->weights.rows() : 0);

  w.u32(mats.size());
  for (const auto& s : mats) {
    w.u8(static_cast<std::uint8_t>(s.role));
    w.u32(s.layer);
    w.u32(s.target->rows());
    w.u32(s.target->cols());
    w.u32(s.target->block_size());
    w.f64s(s.target->generators());
  }
  w.u32(vecs.size());
  for (const auto& s : vecs) {
    w.u8(static_cast<std::uint8_t>(s.role));
    w.u32(s.layer);
    w.f64s(*s.target);
  }

  if (f.quant_plan) {
    const auto& plan = *f.quant_plan;
    if (f.quant_codes.size() != plan.matrices.size()) throw DimensionError("quantized codes do not match the plan");
    w.i32(plan.config.weight_bits);
    w.i32(plan.config.data_bits);
    w.i32(plan.config.pwl_segments);
    w.u32(plan.matrices.size());
    for (std::size_t k = 0; k < plan.matrices.size(); ++k) {
      const auto& mq = plan.matrices[k];
      const auto& codes = f.quant_codes[k];
      w.u8(static_cast<std::uint8_t>(mq.role));
      w.u32(mq.layer);
      for (const auto* fmt : {&mq.weights, &mq.input, &mq.input_spectrum, &mq.output}) write_format(w, *fmt);
      if (!(codes.format == mq.weights)) throw DimensionError("quantized codes do not use the plan's weight format");
      w.u32(codes.shape.size());
      for (auto d : codes.shape) w.u32(d);
      w.u64(codes.codes.size());
      for (auto c : codes.codes) w.i32(c);
    }
    w.u32(plan.vectors.size());
    for (const auto& vq : plan.vectors) {
      w.u8(static_cast<std::uint8_t>(vq.role));
      w.u32(vq.layer);
      write_format(w, vq.format);
    }
    w.u32(plan.states.size());
    for (const auto& sq : plan.states) {
      w.u32(sq.layer);
      write_format(w, sq.c);
      write_format(w, sq.y);
    }
  }
  return std::move(w.data());
}

void expect(bool ok, const char* what) {
  if (!ok) throw FormatError(what);
}

ModelFile parse_payload(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  ModelFile f;
  auto& m = f.model;
  const auto cell = r.u8();
  expect(cell == static_cast<std::uint8_t>(CellType::kLstm) || cell == static_cast<std::uint8_t>(CellType::kGru),
         "unknown cell type");
  m.cell = static_cast<CellType>(cell);
  const auto flags = r.u8();
  expect((flags & ~(kHasReadout | kHasQuant)) == 0, "unknown flags");
  std::size_t width = r.u32();
  const auto layers = r.u32();
  expect(width > 0 && layers > 0 && layers <= r.remaining(), "bad dimension table");
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::size_t h = r.u32(), proj = r.u32();
    const auto act = r.u8();
    expect(h > 0, "bad layer size");
    if (m.cell == CellType::kLstm) {
      expect(act <= 1, "bad cell-input activation");
      rnn::LstmParams p;
      p.input_dim = width;
      p.cell_dim = h;
      p.has_projection = proj != 0;
      p.output_dim = proj ? proj : h;
      p.cell_input = static_cast<rnn::CellInputActivation>(act);
      width = p.output_dim;
      m.layers.emplace_back(std::move(p));
    } else {
      expect(proj == 0 && act == 0, "GRU layers take no projection");
      rnn::GruParams g;
      g.input_dim = width;
      g.hidden_dim = h;
      width = h;
      m.layers.emplace_back(std::move(g));
    }
  }
  const std::size_t readout = r.u32();
  expect((readout != 0) == ((flags & kHasReadout) != 0), "read-out flag and size disagree");
  if (readout) m.readout = rnn::Readout{BlockCirculantMatrix(readout, width, 1), {}};

  std::vector<MatrixSlot> mats;
  std::vector<VectorSlot> vecs;
  collect(m, mats, vecs);
  expect(r.u32() == mats.size(), "unexpected matrix count");
  for (const auto& s : mats) {
    expect(r.u8() == static_cast<std::uint8_t>(s.role) && r.u32() == s.layer, "matrix records out of order");
    const std::size_t rows = r.u32(), cols = r.u32(), block = r.u32();
    expect(rows == s.rows && cols == s.cols, "matrix shape does not match the dimension table");
    expect(block > 0 && rows % block == 0 && cols % block == 0 && fft::is_power_of_two(block), "bad block size");
    *s.target = BlockCirculantMatrix(rows, cols, block, r.f64s(rows * cols / block));
  }
  expect(r.u32() == vecs.size(), "unexpected vector count");
  for (const auto& s : vecs) {
    expect(r.u8() == static_cast<std::uint8_t>(s.role) && r.u32() == s.layer, "vector records out of order");
    *s.target = r.f64s(vector_length(m, s));
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("invalid model: ") + e.what());
  }

  if (flags & kHasQuant) {
    quant::QuantPlan plan;
    plan.config.weight_bits = r.i32();
    plan.config.data_bits = r.i32();
    plan.config.pwl_segments = r.i32();
    const auto n = r.u32();
    expect(n <= r.remaining(), "bad quantized matrix count");
    for (std::uint32_t k = 0; k < n; ++k) {
      quant::MatrixQuant mq;
      const auto role = r.u8();
      expect(rnn::is_matrix_role(static_cast<Role>(role)), "bad quantized matrix role");
      mq.role = static_cast<Role>(role);
      mq.layer = r.u32();
      for (auto* fmt : {&mq.weights, &mq.input, &mq.input_spectrum, &mq.output}) *fmt = read_format(r);
      quant::QuantizedTensor codes;
      codes.format = mq.weights;
      const auto rank = r.u32();
      expect(rank <= 8, "bad code tensor rank");
      std::uint64_t total = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        codes.shape.push_back(r.u32());
        total *= codes.shape.back();
      }
      const auto count = r.u64();
      expect(count == total && count <= r.remaining() / 4, "code count does not match its shape");
      codes.codes.resize(count);
      for (auto& c : codes.codes) {
        c = r.i32();
        expect(c >= mq.weights.min_code() && c <= mq.weights.max_code(), "code outside its format");
      }
      plan.matrices.push_back(mq);
      f.quant_codes.push_back(std::move(codes));
    }
    const auto nv = r.u32();
    expect(nv <= r.remaining(), "bad quantized vector count");
    for (std::uint32_t k = 0; k < nv; ++k) {
      quant::VectorQuant vq;
      vq.role = static_cast<Role>(r.u8());
      vq.layer = r.u32();
      vq.format = read_format(r);
      plan.vectors.push_back(vq);
    }
    const auto ns = r.u32();
    expect(ns <= r.remaining(), "bad quantized state count");
    for (std::uint32_t k = 0; k < ns; ++k) {
      quant::StateQuant sq;
      sq.layer = r.u32();
      sq.c = read_format(r);
      sq.y = read_format(r);
      plan.states.push_back(sq);
    }
    try {
      plan.config.validate();
    } catch (const ConfigError& e) {
      throw FormatError(std::string("bad quantization config: ") + e.what());
    }
    f.quant_plan = std::move(plan);
  }
  expect(r.remaining() == 0, "trailing bytes after the payload");
  return f;
}

}  // namespace

ModelFile with_quantization(rnn::ModelParams model, quant::QuantPlan plan) {
  const quant::QuantizedNetwork net(model, plan);
  ModelFile f{std::move(model), std::move(plan), {}};
  for (std::size_t k = 0; k < f.quant_plan->matrices.size(); ++k) f.quant_codes.push_back(net.weight_codes(k));
  return f;
}

std::vector<std::uint8_t> serialize(const ModelFile& file) {
  const auto body = payload(file);
  const auto text = header_text(file);
  const std::span<const std::uint8_t> head(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u16(kFormatVersion);
  w.u32(head.size());
  w.bytes(head.data(), head.size());
  w.u32(body.size());
  w.bytes(body.data(), body.size());
  w.u32(checksum(head, body));
  return std::move(w.data());
}

ModelFile deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  expect(std::memcmp(magic.data(), kMagic, 4) == 0, "bad magic: not an ERNN model file");
  const auto version = r.u16();
  if (version != kFormatVersion)
    throw FormatError("unsupported model file version " + std::to_string(version));
  const auto head = r.take(r.u32());
  const auto body = r.take(r.u32());
  const auto crc = r.u32();
  expect(r.remaining() == 0, "trailing bytes after the checksum");
  expect(crc == checksum(head, body), "checksum mismatch");
  auto f = parse_payload(body);
  const auto text = header_text(f);
  expect(text.size() == head.size() && std::memcmp(text.data(), head.data(), head.size()) == 0,
         "header text does not match the payload");
  return f;
}

void write_model_file(const std::filesystem::path& path, const ModelFile& file) {
  const auto bytes = serialize(file);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing " + path.string());
}

ModelFile read_model_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace ernn::io
