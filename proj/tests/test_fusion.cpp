#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include <promptfuse/fusion.hpp>
#include <promptfuse/rng.hpp>

using namespace promptfuse;

namespace {
using MatrixD = Matrix<double>;
using RowVectorD = RowVector<double>;

RowVectorD basis(Eigen::Index i, Eigen::Index n = kEmbedDim) {
    RowVectorD v = RowVectorD::Zero(n);
    v(i) = 1;
    return v;
}
MatrixD random_matrix(Eigen::Index r, Eigen::Index c, Xoshiro256& rng) {
    MatrixD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}
MatrixD unit_rows(MatrixD m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).normalize();
    return m;
}
}  // namespace

TEST(TemporalPool, Examples) {
    auto rng = derive_rng(0, "pool");
    const RowVectorD v = random_matrix(1, kEmbedDim, rng);
    MatrixD copies = v.replicate(16, 1);
    EXPECT_LT((temporal_pool(copies) - v).cwiseAbs().maxCoeff(), 1e-12);
    MatrixD two(2, kEmbedDim);
    two << basis(0), basis(1);
    const RowVectorD expect = 0.5 * (basis(0) + basis(1));
    EXPECT_EQ(temporal_pool(two), expect);
    EXPECT_THROW(temporal_pool(MatrixD(0, kEmbedDim)), ValidationError);
}

TEST(TemporalPool, ColumnSumOracleAndPermutation) {
    auto rng = derive_rng(1, "pool");
    for (int trial = 0; trial < 200; ++trial) {
        const MatrixD m = random_matrix(16, kEmbedDim, rng);
        const RowVectorD pooled = temporal_pool(m);
        std::vector<int> perm(16);
        std::iota(perm.begin(), perm.end(), 0);
        shuffle(perm, rng);
        MatrixD shuffled(16, kEmbedDim);
        for (int i = 0; i < 16; ++i) shuffled.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
        const RowVectorD permuted = temporal_pool(shuffled);
        for (Eigen::Index c = 0; c < kEmbedDim; ++c) {
            double s = 0;
            for (Eigen::Index r = 0; r < 16; ++r) s += m(r, c);
            ASSERT_NEAR(pooled(c), s / 16, 1e-6);
            ASSERT_NEAR(permuted(c), pooled(c), 1e-6);
        }
    }
}

TEST(ProjectAudio, Examples) {
    ProjectionLayer<double> layer;
    EXPECT_EQ(project_audio(RowVectorD(RowVectorD::Zero(kAudioEmbedDim)), layer), RowVectorD(RowVectorD::Zero(kEmbedDim)));
    layer.weights.topRows(kEmbedDim).setIdentity();
    EXPECT_EQ(project_audio(basis(0, kAudioEmbedDim), layer), basis(0));
    EXPECT_THROW(project_audio(RowVectorD(RowVectorD::Zero(10)), layer), ShapeError);
}

TEST(ProjectAudio, MatvecOracle) {
    auto rng = derive_rng(2, "proj");
    ProjectionLayer<double> layer{random_matrix(kAudioEmbedDim, kEmbedDim, rng), random_matrix(1, kEmbedDim, rng)};
    const RowVectorD x = random_matrix(1, kAudioEmbedDim, rng);
    const RowVectorD y = project_audio(x, layer);
    for (Eigen::Index j = 0; j < kEmbedDim; ++j) {
        double s = layer.bias(j);
        for (Eigen::Index i = 0; i < kAudioEmbedDim; ++i) s += x(i) * layer.weights(i, j);
        ASSERT_NEAR(y(j), s, 1e-6);
    }
}

TEST(Fuse, Examples) {
    auto rng = derive_rng(3, "fuse");
    const RowVectorD v = random_matrix(1, kEmbedDim, rng);
    const RowVectorD zero = RowVectorD::Zero(kEmbedDim);
    EXPECT_LT((fuse(v, zero, true) - fuse(v, zero, false)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((fuse(basis(0), basis(0), true) - basis(0)).norm(), 1e-15);
    const RowVectorD diag = (basis(0) + basis(1)) / std::sqrt(2.0);
    EXPECT_LT((fuse(basis(0), basis(1), true) - diag).norm(), 1e-15);
    EXPECT_THROW(fuse(basis(0), RowVectorD(-basis(0)), true), ValidationError);
    EXPECT_THROW(fuse(RowVectorD(RowVectorD::Zero(3)), zero, false), ShapeError);
}

TEST(Fuse, UnitNormProperty) {
    auto rng = derive_rng(4, "fuse");
    for (int trial = 0; trial < 1000; ++trial) {
        const double scale = std::exp(rng.uniform(-5, 5));
        const RowVectorD v = scale * random_matrix(1, kEmbedDim, rng);
        const RowVectorD a = random_matrix(1, kEmbedDim, rng);
        ASSERT_NEAR(fuse(v, a, true).norm(), 1.0, 1e-6);
        ASSERT_NEAR(fuse(v, a, false).norm(), 1.0, 1e-6);
        ASSERT_NEAR(fuse(v, a, true, FusionNorm::before_and_after).norm(), 1.0, 1e-6);
    }
}

TEST(SimilarityLogits, ExamplesAndDotOracle) {
    MatrixD f(1, kEmbedDim), t(2, kEmbedDim);
    f << basis(3);
    t << basis(3), basis(4);
    const auto s = similarity_logits(f, t, 7.5);
    EXPECT_DOUBLE_EQ(s.logits(0, 0), 7.5);
    EXPECT_DOUBLE_EQ(s.logits(0, 1), 0.0);

    auto rng = derive_rng(5, "sim");
    const MatrixD a = unit_rows(random_matrix(3, kEmbedDim, rng)), b = unit_rows(random_matrix(2, kEmbedDim, rng));
    const auto r = similarity_logits(a, b, 10.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double d = 0;
            for (Eigen::Index k = 0; k < kEmbedDim; ++k) d += a(i, k) * b(j, k);
            EXPECT_NEAR(r.logits(i, j), 10.0 * d, 1e-5);
        }
    EXPECT_THROW(similarity_logits(MatrixD(2.0 * a), b, 1.0), ValidationError);
}

TEST(ContrastiveLoss, Examples) {
    SimilarityMatrix<double> s{MatrixD::Zero(3, 2), 1.0};
    const std::vector<int> labels{0, 1, 1};
    EXPECT_NEAR(contrastive_loss(s, labels), std::log(2.0), 1e-9);
    s.logits = MatrixD::Zero(1, 5);
    EXPECT_NEAR(contrastive_loss(s, std::vector<int>{3}), std::log(5.0), 1e-12);
    s.logits = MatrixD(1, 2);
    s.logits << 100, 0;
    EXPECT_LT(contrastive_loss(s, std::vector<int>{0}), 1e-6);
    EXPECT_THROW(contrastive_loss(s, std::vector<int>{2}), ValidationError);
    EXPECT_THROW(contrastive_loss(s, std::vector<int>{0, 1}), ShapeError);
}

TEST(ContrastiveLoss, SoftmaxNllOracleAndNonNegative) {
    auto rng = derive_rng(6, "loss");
    for (int trial = 0; trial < 100; ++trial) {
        SimilarityMatrix<double> s{random_matrix(4, 2, rng) * 5.0, 1.0};
        std::vector<int> labels(4);
        for (auto& l : labels) l = static_cast<int>(rng.below(2));
        double oracle = 0;
        for (int r = 0; r < 4; ++r) {
            const double z = std::exp(s.logits(r, 0)) + std::exp(s.logits(r, 1));
            oracle += -std::log(std::exp(s.logits(r, labels[static_cast<std::size_t>(r)])) / z);
        }
        const double loss = contrastive_loss(s, labels);
        ASSERT_NEAR(loss, oracle / 4, 1e-9);
        ASSERT_GE(loss, 0.0);
    }
}

TEST(ContrastiveLoss, GradientIsSoftmaxMinusOneHot) {
    auto rng = derive_rng(7, "grad");
    SimilarityMatrix<double> s{random_matrix(3, 2, rng), 1.0};
    const std::vector<int> labels{1, 0, 1};
    const double h = 1e-6;
    for (int r = 0; r < 3; ++r) {
        const double z = s.logits.row(r).array().exp().sum();
        for (int c = 0; c < 2; ++c) {
            const double analytic = (std::exp(s.logits(r, c)) / z - (labels[static_cast<std::size_t>(r)] == c)) / 3.0;
            auto p = s, m = s;
            p.logits(r, c) += h;
            m.logits(r, c) -= h;
            const double numeric = (contrastive_loss(p, labels) - contrastive_loss(m, labels)) / (2 * h);
            EXPECT_NEAR(numeric, analytic, 1e-6);
        }
    }
}

TEST(Predict, ExamplesAndScaleInvariance) {
    SimilarityMatrix<double> s{MatrixD(2, 2), 1.0};
    s.logits << 0.2, 0.9, 0.5, 0.5;
    EXPECT_EQ(predict(s), (std::vector<int>{1, 0}));
    auto rng = derive_rng(8, "pred");
    for (int trial = 0; trial < 100; ++trial) {
        SimilarityMatrix<double> r{random_matrix(8, 2, rng), 1.0};
        const auto base = predict(r);
        r.logits *= std::exp(rng.uniform(-10, 10));
        ASSERT_EQ(predict(r), base);
    }
}
