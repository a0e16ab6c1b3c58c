#include "ernn/model_file.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "ernn/errors.hpp"
#include "ernn/layer_spec.hpp"

namespace ernn::io {
namespace {

using rnn::CellType;

bool same_model(const rnn::ModelParams& a, const rnn::ModelParams& b) {
  if (a.cell != b.cell || a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].index() != b.layers[l].index()) return false;
    if (const auto* p = std::get_if<rnn::LstmParams>(&a.layers[l])) {
      const auto& q = std::get<rnn::LstmParams>(b.layers[l]);
      if (p->input_dim != q.input_dim || p->cell_dim != q.cell_dim || p->output_dim != q.output_dim ||
          p->has_projection != q.has_projection || p->cell_input != q.cell_input || !(p->gates == q.gates) ||
          !(p->projection == q.projection) || p->peephole_i != q.peephole_i || p->peephole_f != q.peephole_f ||
          p->peephole_o != q.peephole_o || p->bias_i != q.bias_i || p->bias_f != q.bias_f || p->bias_g != q.bias_g ||
          p->bias_o != q.bias_o)
        return false;
    } else {
      const auto& g = std::get<rnn::GruParams>(a.layers[l]);
      const auto& h = std::get<rnn::GruParams>(b.layers[l]);
      if (g.input_dim != h.input_dim || g.hidden_dim != h.hidden_dim || !(g.gates == h.gates) ||
          !(g.candidate_input == h.candidate_input) || !(g.candidate_state == h.candidate_state) ||
          g.bias_r != h.bias_r || g.bias_z != h.bias_z || g.bias_candidate != h.bias_candidate)
        return false;
    }
  }
  if (a.readout.has_value() != b.readout.has_value()) return false;
  return !a.readout || (a.readout->weights == b.readout->weights && a.readout->bias == b.readout->bias);
}

ModelFile random_file(std::mt19937_64& rng, bool allow_quant = true) {
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const std::size_t block = std::size_t{1} << pick(4);
  const std::size_t io = block << pick(2);
  LayerSpec spec;
  spec.cell = pick(2) ? CellType::kLstm : CellType::kGru;
  spec.input_dim = io * (1 + pick(3));
  for (std::size_t l = 0, n = 1 + pick(3); l < n; ++l) spec.hidden.push_back(io * (1 + pick(3)));
  if (spec.cell == CellType::kLstm && pick(2)) spec.projection = io * (1 + pick(2));
  spec.block = block;
  spec.io_block = io;
  const auto act = pick(2) ? rnn::CellInputActivation::kTanh : rnn::CellInputActivation::kSigmoid;
  auto model = make_model(spec, pick(2) ? 1 + pick(6) : 0, act);
  randomize_model(model, rng(), 1.0);
  if (!allow_quant || pick(2)) return ModelFile{std::move(model), std::nullopt, {}};
  std::vector<rnn::Sequence> calib(1);
  for (int t = 0; t < 4; ++t) calib[0].push_back(ernn::testing::random_vector(rng, spec.input_dim));
  const int bits = 4 + static_cast<int>(pick(13));
  auto plan = quant::calibrate(model, calib, quant::QuantConfig{bits, bits, pick(2) ? 64 : 0});
  return with_quantization(std::move(model), std::move(plan));
}

TEST(ModelFileTest, RoundTripIsByteIdentical) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 50; ++i) {
    const auto f = random_file(rng);
    const auto bytes = serialize(f);
    const auto g = deserialize(bytes);
    EXPECT_TRUE(same_model(f.model, g.model)) << i;
    EXPECT_EQ(f.quant_plan, g.quant_plan) << i;
    ASSERT_EQ(f.quant_codes.size(), g.quant_codes.size());
    for (std::size_t k = 0; k < f.quant_codes.size(); ++k) {
      EXPECT_EQ(f.quant_codes[k].codes, g.quant_codes[k].codes);
      EXPECT_EQ(f.quant_codes[k].shape, g.quant_codes[k].shape);
      EXPECT_EQ(f.quant_codes[k].format, g.quant_codes[k].format);
    }
    EXPECT_EQ(serialize(g), bytes) << i;
  }
}

TEST(ModelFileTest, LayoutStartsWithMagicAndVersion) {
  std::mt19937_64 rng(11);
  const auto bytes = serialize(random_file(rng, false));
  ASSERT_GT(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ERNN");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), kFormatVersion);
  const std::string all(bytes.begin(), bytes.end());
  EXPECT_NE(all.find("ernn model v1\ncell="), std::string::npos);
}

TEST(ModelFileTest, GeneratorsAreLittleEndianDoubles) {
  auto model = make_model(LayerSpec{CellType::kGru, 2, {2}, 0, 2, 2});
  std::get<rnn::GruParams>(model.layers[0]).gates.generators()[0] = 1.0;
  const auto bytes = serialize(ModelFile{model, std::nullopt, {}});
  const std::uint8_t one[8] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
  EXPECT_NE(std::search(bytes.begin(), bytes.end(), std::begin(one), std::end(one)), bytes.end());
}

TEST(ModelFileTest, EveryTruncationIsRejected) {
  std::mt19937_64 rng(12);
  const auto bytes = serialize(random_file(rng, false));
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(deserialize(std::span(bytes.data(), n)), FormatError) << n;
}

TEST(ModelFileTest, CorruptionIsRejected) {
  std::mt19937_64 rng(13);
  const auto bytes = serialize(random_file(rng));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(deserialize(bad), FormatError);
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 5}) {
    bad = bytes;
    bad[pos] ^= 0x10;
    EXPECT_THROW(deserialize(bad), FormatError) << pos;
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(deserialize(bad), FormatError);
}

TEST(ModelFileTest, FileHelpersRoundTrip) {
  std::mt19937_64 rng(14);
  const auto f = random_file(rng);
  const auto path = std::filesystem::temp_directory_path() / "ernn_model_file_test.ernn";
  write_model_file(path, f);
  const auto g = read_model_file(path);
  EXPECT_EQ(serialize(g), serialize(f));
  std::filesystem::remove(path);
  EXPECT_THROW(read_model_file(path), Error);
}

TEST(ModelFileTest, LoadedModelRuns) {
  std::mt19937_64 rng(15);
  const auto f = random_file(rng, false);
  const auto g = deserialize(serialize(f));
  rnn::Sequence xs{ernn::testing::random_vector(rng, f.model.input_dim())};
  EXPECT_EQ(rnn::Network(f.model).run_sequence(xs), rnn::Network(g.model).run_sequence(xs));
}

}  // namespace
}  // namespace ernn::io
