#include <gtest/gtest.h>

#include "vprb/report.hpp"

using namespace vprb;

namespace {

MatchReport sample_report(std::vector<double> taus, std::vector<double> fcm) {
  MatchReport r;
  r.method = "gem";
  r.backbone = "toy-8-16-16";
  r.loss = "triplet";
  r.test_name = "test01";
  r.reference_name = "reference";
  r.taus = std::move(taus);
  r.fcm = std::move(fcm);
  r.n_queries = 50;
  r.config_hash = 0xabcdef0123456789ULL;
  r.seed = 7;
  return r;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Report, OutdoorColumns) {
  const auto md = emit_report(sample_report({25, 10, 5, 2}, {100, 96, 90, 70}), ReportFormat::kMarkdown);
  EXPECT_NE(md.find("| τ=25 m | τ=10 m | τ=5 m | τ=2 m |"), std::string::npos) << md;
  EXPECT_NE(md.find("abcdef0123456789"), std::string::npos);
  EXPECT_NE(md.find("| 7 |"), std::string::npos);
}

TEST(Report, IndoorColumnsInCentimeters) {
  const auto md = emit_report(sample_report({1.0, 0.75, 0.5, 0.25}, {90, 80, 70, 60}),
                              ReportFormat::kMarkdown, TauUnit::kCentimeters);
  EXPECT_NE(md.find("| τ=100 cm | τ=75 cm | τ=50 cm | τ=25 cm |"), std::string::npos) << md;
}

TEST(Report, EmptySweepIsHeaderOnly) {
  const auto csv = emit_report(sample_report({}, {}), ReportFormat::kCsv);
  EXPECT_EQ(csv, std::string(kReportHeader) + "\n");
  const auto md = emit_report(sample_report({}, {}), ReportFormat::kMarkdown);
  EXPECT_EQ(md.find("| gem |"), std::string::npos) << md;
  EXPECT_NE(md.find("| method |"), std::string::npos) << md;
}

TEST(Report, CsvIsLongForm) {
  const auto csv = emit_report(sample_report({25, 2}, {100, 62.5}), ReportFormat::kCsv);
  EXPECT_EQ(csv, std::string(kReportHeader) +
                     "\n"
                     "gem,toy-8-16-16,triplet,25,100,50,abcdef0123456789,7\n"
                     "gem,toy-8-16-16,triplet,2,62.5,50,abcdef0123456789,7\n");
}

TEST(Report, CsvRoundTrip) {
  ReportTable t;
  t.taus = {25, 10, 5};
  for (const char* loss : {"contrastive", "triplet", "arcface"}) {
    for (const char* method : {"gem", "netvlad"}) {
      ReportRow row{method, "toy-8-16-16", loss, {100, 92, 71.3}, false, 50, 42, 7};
      t.rows.push_back(row);
    }
  }
  t.rows[3].failed = true;
  const std::string csv = emit_report(t, ReportFormat::kCsv);
  EXPECT_EQ(count(csv, "FAILED"), 3u);
  const ReportTable back = parse_report_csv(csv);
  EXPECT_EQ(back.taus, t.taus);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].method, t.rows[i].method);
    EXPECT_EQ(back.rows[i].loss, t.rows[i].loss);
    EXPECT_EQ(back.rows[i].failed, t.rows[i].failed);
    if (!t.rows[i].failed) EXPECT_EQ(back.rows[i].fcm, t.rows[i].fcm);
  }
  EXPECT_EQ(emit_report(back, ReportFormat::kCsv), csv);
}

TEST(Report, ParseRejectsGarbage) {
  EXPECT_THROW(parse_report_csv("a,b\n1,2\n"), Error);
  EXPECT_THROW(parse_report_csv(std::string(kReportHeader) + "\ngem,x,y,notanumber,1,1,0,1\n"),
               Error);
}

TEST(Report, Deltas) {
  ReportTable t;
  t.taus = {25};
  auto row = [](const char* m, const char* l, double f) {
    return ReportRow{m, "toy", l, {f}, false, 10, 1, 7};
  };
  t.rows = {row("gem", "untrained", 50),   row("gem", "contrastive", 80), row("gem", "triplet", 85),
            row("gem", "arcface", 90),     row("netvlad", "contrastive", 70),
            row("netvlad", "triplet", 75), row("netvlad", "arcface", 78)};
  const std::string md = emit_deltas(t);
  EXPECT_NE(md.find("| gem | arcface - triplet | +5.0 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| gem | arcface - contrastive | +10.0 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| netvlad | triplet - contrastive | +5.0 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| arcface | gem - netvlad | +12.0 |"), std::string::npos) << md;
  EXPECT_EQ(md.find("untrained"), std::string::npos) << md;
}

TEST(Report, ParseFormatAndUnit) {
  EXPECT_EQ(parse_report_format("md"), ReportFormat::kMarkdown);
  EXPECT_EQ(parse_report_format("csv"), ReportFormat::kCsv);
  EXPECT_EQ(parse_tau_unit("cm"), TauUnit::kCentimeters);
  EXPECT_THROW(parse_report_format("xml"), Error);
}
