#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "pmlgamm/dataset.hpp"

using namespace pmlgamm;

namespace {

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_dataset_csv(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Dataset, ParsesGroupsInFirstAppearanceOrder) {
  const Dataset d = parse("group,y,x1,x2\n7,1,0.1,2\n3,0,0.2,3\n7,2,0.3,4\n");
  ASSERT_EQ(d.num_groups(), 2u);
  EXPECT_EQ(d.groups()[0].group_id, 7);
  EXPECT_EQ(d.groups()[0].rows.size(), 2u);
  EXPECT_EQ(d.groups()[1].group_id, 3);
  EXPECT_EQ(d.num_covariates(), 2u);
  EXPECT_EQ(d.num_rows(), 3u);
  EXPECT_EQ(d.covariate(1), (std::vector<double>{2, 4, 3}));
}

TEST(Dataset, RoundTripsExactly) {
  const Dataset d = parse("group,y,x1\n1,3,0.1234567890123456789\n2,0,1e-300\n2,1,0.5\n");
  std::ostringstream out;
  write_dataset_csv(out, d);
  const Dataset e = parse(out.str());
  std::ostringstream again;
  write_dataset_csv(again, e);
  EXPECT_EQ(out.str(), again.str());
  EXPECT_EQ(e.groups()[0].rows[0].x[0], 0.1234567890123456789);
}

TEST(Dataset, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("group,y,x1\n1,2,0.5\n1,abc,0.5\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("group,y,x1\n1,2\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("group,y,x1\nx,2,0.1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("grp,y,x1\n1,2,0.1\n").find("line 1"), std::string::npos);
}

TEST(Dataset, RejectsEmptyInputs) {
  EXPECT_THROW(parse(""), ConfigError);
  EXPECT_THROW(parse("group,y,x1\n"), ConfigError);
  EXPECT_THROW(parse("group,y\n1,2\n"), ConfigError);
}

TEST(Dataset, ValidatesResponsesPerFamily) {
  const Dataset d = parse("group,y,x1\n1,2,0.5\n2,0,0.1\n");
  EXPECT_NO_THROW(d.validate_responses(Family::Poisson));
  EXPECT_THROW(d.validate_responses(Family::Bernoulli), DomainError);
}

TEST(Dataset, ConstructorInvariants) {
  EXPECT_THROW(Dataset(std::vector<Group>{}), ConfigError);
  EXPECT_THROW(Dataset({Group{1, {}}}), ConfigError);
  EXPECT_THROW(Dataset({Group{1, {Row{0, {0.1}}}}, Group{1, {Row{0, {0.2}}}}}), ConfigError);
  EXPECT_THROW(Dataset({Group{1, {Row{0, {0.1}}, Row{0, {0.1, 0.2}}}}}), ConfigError);
}
