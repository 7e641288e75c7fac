#include "lw2g/errors.hpp"
#include "lw2g/metrics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace lw2g;
using namespace lw2g::testing;

TEST(Metrics, MatchReferenceOnRandomMatrices) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const PlainMatrix p = random_plain_matrix(2 + trial % 9, rng);
        const AccuracyMatrix m = to_matrix(p);
        EXPECT_NEAR(faa(m), faa_reference(p), 1e-12);
        EXPECT_NEAR(ffm(m), ffm_reference(p), 1e-12);
        EXPECT_NEAR(pra(m), pra_reference(p), 1e-12);
    }
}

TEST(Metrics, ForgettingExample) {
    AccuracyMatrix m(2);
    m.set_accuracy(0, 0, 0.9);
    m.set_accuracy(0, 1, 0.8);
    m.set_accuracy(1, 1, 0.7);
    EXPECT_NEAR(ffm(m), 0.1, 1e-12);
    EXPECT_NEAR(faa(m), 0.75, 1e-12);
}

TEST(Metrics, SingleTaskForgettingThrows) {
    AccuracyMatrix m(1);
    m.set_accuracy(0, 0, 0.5);
    EXPECT_THROW(ffm(m), ContractError);
    EXPECT_DOUBLE_EQ(faa(m), 0.5);
}

TEST(Metrics, IncompleteMatrixThrows) {
    AccuracyMatrix m(2);
    m.set_accuracy(0, 0, 0.5);
    EXPECT_THROW(faa(m), ContractError);
    EXPECT_THROW(pra(m), ContractError);
    EXPECT_THROW(faa(AccuracyMatrix{}), ContractError);
}

TEST(Metrics, RejectsBadEntries) {
    AccuracyMatrix m(2);
    EXPECT_THROW(m.set_accuracy(1, 0, 0.5), ContractError);
    EXPECT_THROW(m.set_accuracy(0, 0, 1.5), ContractError);
    EXPECT_THROW(m.set_retrieval(0, 1, 3, 2), ContractError);
    EXPECT_THROW(m.set_accuracy(2, 2, 0.5), ContractError);
}

TEST(Metrics, ResizeKeepsEntries) {
    AccuracyMatrix m(1);
    m.set_accuracy(0, 0, 0.25);
    m.set_retrieval(0, 0, 3, 4);
    m.resize(3);
    EXPECT_EQ(m.size(), 3);
    EXPECT_DOUBLE_EQ(m.accuracy(0, 0), 0.25);
    EXPECT_EQ(m.hits(0, 0), 3);
    EXPECT_FALSE(m.has(0, 2));
    EXPECT_THROW(m.resize(2), ContractError);
}

TEST(Metrics, CsvListsRecordedCells) {
    AccuracyMatrix m(2);
    m.set_accuracy(0, 0, 1.0);
    m.set_oracle(0, 0, 1.0);
    m.set_retrieval(0, 0, 4, 4);
    std::ostringstream out;
    write_matrix_csv(out, m);
    EXPECT_EQ(out.str(), "task,after_task,accuracy,oracle_accuracy,retrieval_hits,retrieval_total\n0,0,1,1,4,4\n");
}
