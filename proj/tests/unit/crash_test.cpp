#include "crash.hpp"
#include "harness.hpp"

TEST(CrashRecovery, KillMidWrite) {
  gt::TempDir dir;
  const auto rep = crash::run(dir / "store", 200, 4242);
  EXPECT_EQ(rep.cycles, 200);
  EXPECT_EQ(rep.corrupt_stores, 0) << rep.first_problem;
  EXPECT_EQ(rep.hybrid_records, 0) << rep.first_problem;
  EXPECT_EQ(rep.lost_acks, 0) << rep.first_problem;
}
