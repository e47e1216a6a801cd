#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sta/cohort.hpp"
#include "sta/error.hpp"

using namespace sta;

namespace {

Dataset small_dataset() {
  CohortSpec spec;
  spec.n_cases = 3;
  spec.n_controls = 4;
  spec.image_size = 16;
  spec.seed = 31;
  return {spec.seed, generate_cohort(spec)};
}

void expect_equal(const Dataset& a, const Dataset& b) {
  EXPECT_EQ(a.seed, b.seed);
  ASSERT_EQ(a.patients.size(), b.patients.size());
  for (std::size_t i = 0; i < a.patients.size(); ++i) {
    const auto &p = a.patients[i], &q = b.patients[i];
    EXPECT_EQ(p.patient_id, q.patient_id);
    EXPECT_EQ(p.label.y, q.label.y);
    EXPECT_EQ(p.label.event_year, q.label.event_year);
    EXPECT_EQ(p.label.followup_years, q.label.followup_years);
    ASSERT_EQ(p.exams.size(), q.exams.size());
    for (std::size_t t = 0; t < p.exams.size(); ++t) {
      EXPECT_EQ(p.exams[t].year, q.exams[t].year);
      for (std::size_t v = 0; v < 4; ++v) {
        EXPECT_EQ(p.exams[t].views[v].view, q.exams[t].views[v].view);
        EXPECT_EQ(p.exams[t].views[v].pixels, q.exams[t].views[v].pixels);
      }
    }
  }
}

std::string serialized(const Dataset& d) {
  std::ostringstream os;
  write_dataset(os, d);
  return os.str();
}

std::size_t error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    read_dataset(in);
  } catch (const DataError& e) {
    return e.line();
  }
  ADD_FAILURE() << "expected DataError";
  return 0;
}

}  // namespace

TEST(DatasetIo, RoundTripIsBitExact) {
  const Dataset d = small_dataset();
  std::istringstream in(serialized(d));
  expect_equal(read_dataset(in), d);
}

TEST(DatasetIo, RoundTripThroughFile) {
  const Dataset d = small_dataset();
  const auto path = std::filesystem::temp_directory_path() / "sta_io_roundtrip.jsonl";
  write_dataset(path, d);
  expect_equal(read_dataset(path), d);
  std::filesystem::remove(path);
}

TEST(DatasetIo, SameCohortSerializesIdentically) {
  EXPECT_EQ(serialized(small_dataset()), serialized(small_dataset()));
}

TEST(DatasetIo, TruncatedFileIsAParseError) {
  const std::string text = serialized(small_dataset());
  const std::string cut = text.substr(0, text.size() * 2 / 3);
  const auto lines = static_cast<std::size_t>(std::count(cut.begin(), cut.end(), '\n'));
  EXPECT_EQ(error_line(cut), lines + 1);
}

TEST(DatasetIo, MalformedLineReportsItsNumber) {
  std::string text = serialized(small_dataset());
  // break the third line (second patient)
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
  text.insert(pos, "{oops");
  EXPECT_EQ(error_line(text), 3u);
}

TEST(DatasetIo, VersionMismatchIsRejected) {
  std::string text = serialized(small_dataset());
  text.replace(text.find("\"version\":1"), 11, "\"version\":2");
  std::istringstream in(text);
  EXPECT_THROW(read_dataset(in), DataError);
}

TEST(DatasetIo, MissingHeaderOrFieldIsRejected) {
  std::istringstream empty("");
  EXPECT_THROW(read_dataset(empty), DataError);
  const std::string header = "{\"format\":\"sta-cohort\",\"version\":1,\"seed\":1}\n";
  EXPECT_EQ(error_line(header + "{\"patient_id\":\"x\",\"exams\":[]}\n"), 2u);
  EXPECT_THROW(read_dataset(std::filesystem::path("/nonexistent/cohort.jsonl")), DataError);
}

TEST(DatasetIo, GoldenFileParses) {
  const Dataset d = read_dataset(std::filesystem::path(STA_TEST_DATA) / "golden_patient.jsonl");
  EXPECT_EQ(d.seed, 42u);
  ASSERT_EQ(d.patients.size(), 1u);
  const auto& p = d.patients[0];
  EXPECT_EQ(p.patient_id, "golden-001");
  EXPECT_EQ(p.label.y, 1);
  EXPECT_EQ(p.label.event_year, 2);
  ASSERT_EQ(p.exams.size(), 2u);
  EXPECT_EQ(p.exams[0].year, 2013.5);
  EXPECT_EQ(p.exams[1].year, 2015.0);
  EXPECT_EQ(p.taus(), (std::vector<double>{-18.0, 0.0}));
  const std::vector<std::vector<float>> a = {{0, 0.5f, 1, 0.25f}, {0.125f, 0.75f, 0, 1},
                                             {1, 1, 0.5f, 0.5f}, {0.0625f, 0, 0, 0.375f}};
  for (std::size_t v = 0; v < 4; ++v) {
    EXPECT_EQ(p.exams[0].views[v].view, kAllViews[v]);
    EXPECT_EQ(p.exams[0].views[v].height, 2u);
    EXPECT_EQ(p.exams[0].views[v].pixels, a[v]);
    // the second exam lists the views in reverse
    EXPECT_EQ(p.exams[1].views[v].pixels, a[3 - v]);
  }
}

TEST(Base64, KnownVectors) {
  EXPECT_EQ(base64_encode({}), "");
  EXPECT_EQ(base64_encode({'f'}), "Zg==");
  EXPECT_EQ(base64_encode({'f', 'o'}), "Zm8=");
  EXPECT_EQ(base64_encode({'f', 'o', 'o'}), "Zm9v");
  EXPECT_EQ(base64_decode("Zm9vYmFy"), (std::vector<std::uint8_t>{'f', 'o', 'o', 'b', 'a', 'r'}));
}

TEST(Base64, RoundTripAndBadInput) {
  std::vector<std::uint8_t> bytes(256);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(i);
  EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  EXPECT_THROW(base64_decode("Zm9v!"), std::invalid_argument);
  EXPECT_THROW(base64_decode("Zm9"), std::invalid_argument);
}
