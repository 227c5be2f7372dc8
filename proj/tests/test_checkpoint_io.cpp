#include <gtest/gtest.h>

#include <random>

#include "mergeforge/checkpoint_io.hpp"
#include "support.hpp"

using namespace mergeforge;
using mftest::TempDir;

namespace {

std::string container(const std::string& header, const std::string& payload) {
  std::string out;
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((header.size() >> (8 * i)) & 0xFF));
  return out + header + payload;
}

ErrorKind kind_of(const std::string& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::IoFailure;
}

}  // namespace

TEST(CheckpointIo, EmptyMapIsHeaderOnly) {
  const std::string bytes = encode_checkpoint(TensorMap{});
  EXPECT_EQ(bytes, container("{}", ""));
  EXPECT_EQ(decode_checkpoint(bytes).size(), 0u);
}

TEST(CheckpointIo, ExactLayout) {
  TensorMap m;
  m.insert("b", mftest::vec({1.0f}));
  m.insert("a", Tensor({2, 1}, {2.0f, -0.0f}));
  const std::string bytes = encode_checkpoint(m);
  const std::string header =
      R"({"a":{"data_offsets":[0,8],"dtype":"F32","shape":[2,1]},"b":{"data_offsets":[8,12],"dtype":"F32","shape":[1]}})";
  const std::string payload("\x00\x00\x00\x40\x00\x00\x00\x80\x00\x00\x80\x3f", 12);
  EXPECT_EQ(bytes, container(header, payload));
}

TEST(CheckpointIo, NamesListedInLexicographicOrder) {
  TensorMap m;
  m.insert("b", mftest::vec({1.0f}));
  m.insert("a", mftest::vec({2.0f}));
  const std::string bytes = encode_checkpoint(m);
  EXPECT_LT(bytes.find("\"a\""), bytes.find("\"b\""));
}

TEST(CheckpointIo, RoundTripThroughFile) {
  TempDir dir;
  std::mt19937_64 rng(11);
  const TensorMap m = mftest::random_bits_map(rng, 8, 256);
  write_checkpoint(m, dir.file("m.ckpt"));
  const TensorMap back = read_checkpoint(dir.file("m.ckpt"));
  EXPECT_TRUE(bit_equal(m, back));
}

TEST(CheckpointIo, RoundTripProperty) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    TensorMap m = mftest::random_bits_map(rng, 12, 512);
    if (trial % 3 == 0) m.metadata()["note"] = "trial " + std::to_string(trial);
    const std::string bytes = encode_checkpoint(m);
    ASSERT_TRUE(bit_equal(m, decode_checkpoint(bytes))) << "trial " << trial;
    ASSERT_EQ(bytes, encode_checkpoint(decode_checkpoint(bytes)));
  }
}

TEST(CheckpointIo, WritesAreDeterministic) {
  TempDir dir;
  std::mt19937_64 rng(5);
  const TensorMap m = mftest::random_bits_map(rng, 6, 128);
  write_checkpoint(m, dir.file("a"));
  write_checkpoint(m, dir.file("b"));
  EXPECT_EQ(mftest::read_bytes(dir.file("a")), mftest::read_bytes(dir.file("b")));
}

TEST(CheckpointIo, InsertionOrderDoesNotMatter) {
  TensorMap x, y;
  x.insert("z", mftest::vec({1}));
  x.insert("m", mftest::vec({2}));
  y.insert("m", mftest::vec({2}));
  y.insert("z", mftest::vec({1}));
  EXPECT_EQ(encode_checkpoint(x), encode_checkpoint(y));
}

TEST(CheckpointIo, F16UpcastIsExact) {
  // 0x3C00 = 1.0, 0x3800 = 0.5 in binary16
  const std::string header = R"({"h":{"dtype":"F16","shape":[2],"data_offsets":[0,4]}})";
  const std::string payload("\x00\x3C\x00\x38", 4);
  const TensorMap m = decode_checkpoint(container(header, payload));
  const Tensor& t = m.at("h");
  EXPECT_EQ(t.dtype, Dtype::F16);
  ASSERT_EQ(t.data.size(), 2u);
  EXPECT_EQ(t.data[0], 1.0f);
  EXPECT_EQ(t.data[1], 0.5f);
}

TEST(CheckpointIo, HalfToFloatCoversAllClasses) {
  EXPECT_EQ(half_to_float(0x0000), 0.0f);
  EXPECT_TRUE(std::signbit(half_to_float(0x8000)));
  EXPECT_EQ(half_to_float(0x0001), std::ldexp(1.0f, -24));  // smallest subnormal
  EXPECT_EQ(half_to_float(0x03FF), std::ldexp(1023.0f, -24));
  EXPECT_EQ(half_to_float(0x0400), std::ldexp(1.0f, -14));
  EXPECT_EQ(half_to_float(0x7BFF), 65504.0f);
  EXPECT_EQ(half_to_float(0xC000), -2.0f);
  EXPECT_TRUE(std::isinf(half_to_float(0x7C00)));
  EXPECT_TRUE(std::isnan(half_to_float(0x7E00)));
}

TEST(CheckpointIo, HalfToFloatMatchesDefinitionForEveryPattern) {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const int exp = (h >> 10) & 0x1F;
    const int mant = h & 0x3FF;
    if (exp == 0x1F) continue;
    const double mag = exp == 0 ? std::ldexp(mant, -24) : std::ldexp(1024 + mant, exp - 25);
    const double expected = (h & 0x8000) ? -mag : mag;
    ASSERT_EQ(static_cast<double>(half_to_float(static_cast<std::uint16_t>(h))), expected) << std::hex << h;
  }
}

TEST(CheckpointIo, HeaderLengthBeyondFileIsMalformed) {
  std::string bytes = container("{}", "");
  bytes[0] = 100;
  EXPECT_EQ(kind_of(bytes), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(std::string(5, '\0')), ErrorKind::MalformedHeader);
}

TEST(CheckpointIo, HeaderErrors) {
  EXPECT_EQ(kind_of(container("{not json", "")), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(container("[]", "")), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(container(R"({"a":{"dtype":"F32","shape":[1]}})", "")), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(container(R"({"a":{"dtype":"F32","shape":[-1],"data_offsets":[0,0]}})", "")),
            ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(container(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4],"x":1}})", "abcd")),
            ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(container(R"({"a":{"dtype":"BF16","shape":[1],"data_offsets":[0,2]}})", "ab")),
            ErrorKind::UnsupportedDtype);
  EXPECT_EQ(kind_of(container(R"({"a":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}})", "a")),
            ErrorKind::UnsupportedDtype);
}

TEST(CheckpointIo, OffsetsMustMatchShape) {
  EXPECT_EQ(kind_of(container(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})", "abcd")),
            ErrorKind::ShapeMismatch);
}

TEST(CheckpointIo, OverlapAndGapsAreMalformed) {
  const std::string overlap =
      R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"b":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})";
  EXPECT_EQ(kind_of(container(overlap, "abcd")), ErrorKind::MalformedHeader);
  const std::string gap = R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})";
  EXPECT_EQ(kind_of(container(gap, "abcdefgh")), ErrorKind::MalformedHeader);
  const std::string trailing = R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})";
  EXPECT_EQ(kind_of(container(trailing, "abcdefgh")), ErrorKind::MalformedHeader);
}

TEST(CheckpointIo, ValidateHeaderSummarizesWithoutPayload) {
  TempDir dir;
  TensorMap m;
  for (const char* name : {"x", "y", "z"}) m.insert(name, mftest::vec({1, 2, 3, 4}));
  write_checkpoint(m, dir.file("m.ckpt"));
  const HeaderSummary s = validate_header(dir.file("m.ckpt"));
  EXPECT_EQ(s.tensor_count, 3u);
  EXPECT_EQ(s.total_bytes, 48u);
  EXPECT_EQ(s.dtypes, std::set<Dtype>{Dtype::F32});
  EXPECT_EQ(s.parameter_count, 12u);
}

TEST(CheckpointIo, ValidateHeaderOnTwoTensorMap) {
  TempDir dir;
  TensorMap m;
  m.insert("p", mftest::vec({1}));
  m.insert("q", Tensor({2, 2}, {1, 2, 3, 4}));
  write_checkpoint(m, dir.file("m.ckpt"));
  EXPECT_EQ(validate_header(dir.file("m.ckpt")).tensor_count, 2u);
}

TEST(CheckpointIo, TruncatedPayloadIsShapeMismatch) {
  TempDir dir;
  TensorMap m;
  m.insert("p", mftest::vec({1, 2, 3}));
  const std::string bytes = encode_checkpoint(m);
  mftest::write_bytes(dir.file("t.ckpt"), bytes.substr(0, bytes.size() - 5));
  try {
    validate_header(dir.file("t.ckpt"));
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(read_checkpoint(dir.file("t.ckpt")), Error);
}

TEST(CheckpointIo, MissingFileIsIoFailure) {
  try {
    read_checkpoint("/nonexistent/dir/x.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoFailure);
  }
  try {
    write_checkpoint(TensorMap{}, "/nonexistent/dir/x.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoFailure);
  }
}

TEST(CheckpointIo, MetadataRoundTrips) {
  TensorMap m;
  m.insert("w", mftest::vec({1}));
  m.metadata()["mergeforge.kind"] = "task_vector";
  const TensorMap back = decode_checkpoint(encode_checkpoint(m));
  EXPECT_EQ(back.metadata().at("mergeforge.kind"), "task_vector");
}

TEST(TensorMap, RejectsInvalidEntries) {
  TensorMap m;
  EXPECT_THROW(m.insert("", mftest::vec({1})), Error);
  EXPECT_THROW(m.insert("__metadata__", mftest::vec({1})), Error);
  m.insert("a", mftest::vec({1}));
  EXPECT_THROW(m.insert("a", mftest::vec({1})), Error);
  EXPECT_THROW(Tensor({3}, {1.0f, 2.0f}), Error);
}
