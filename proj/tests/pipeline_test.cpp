#include <gtest/gtest.h>

#include "crfnet/data/synthetic.hpp"
#include "crfnet/pipeline/two_step.hpp"

using namespace crfnet;
using namespace crfnet::pipeline;

namespace {

data::SynthConfig toy_synth() {
  data::SynthConfig c;
  c.num_subjects = 3;
  c.sequences_per_subject = 2;
  c.num_classes = 3;
  c.image_size = 8;
  c.transition_frames = 2;
  c.seed = 4;
  return c;
}

TwoStepConfig toy_config() {
  TwoStepConfig cfg;
  cfg.extractor.height = 8;
  cfg.extractor.width = 8;
  cfg.extractor.feature_dim = 6;
  cfg.extractor.stem = {{4, 3, 1, nn::Padding::same}};
  cfg.extractor.stages = {{nn::StageKind::residual, 2, 3}};
  cfg.sgd.total_iterations = 30;
  cfg.sgd.batch_size = 8;
  cfg.crf.max_iterations = 100;
  cfg.seed = 9;
  return cfg;
}

// Identity state weights on the logits, zero bias and zero transitions.
TrainedPipeline logit_passthrough(const TrainedPipeline& trained) {
  TrainedPipeline p = trained;
  const std::size_t k = p.labels.size();
  p.feature_tap = FeatureTap::logits;
  p.standardizer = {};
  p.crf = CrfModel(p.labels, k);
  for (std::size_t i = 0; i < k; ++i) p.crf.state_weights()(i, i) = 1.0;
  return p;
}

std::vector<nn::Tensor> random_frames(Rng& rng, std::size_t t) {
  std::vector<nn::Tensor> frames;
  for (std::size_t i = 0; i < t; ++i) {
    nn::Tensor f({8, 8, 1});
    for (double& v : f.values()) v = rng.uniform();
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace

TEST(TwoStep, TrainsAndCrfTraceIsNonIncreasing) {
  const data::Corpus corpus = data::generate_synthetic_corpus(toy_synth());
  TrainingDiagnostics diag;
  const TrainedPipeline p = train_two_step(corpus, toy_config(), 0, &diag);
  EXPECT_EQ(diag.num_frames, corpus.num_frames());
  EXPECT_EQ(diag.extractor_log.losses.size(), 30u);
  const auto& trace = diag.crf_report.objective_trace;
  ASSERT_GE(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12);
  EXPECT_EQ(p.crf.dim(), 6u);
  EXPECT_EQ(p.labels, corpus.labels);
  EXPECT_TRUE(p.crf.all_finite());
}

TEST(TwoStep, SingleFrameCorpusIsLegal) {
  data::Corpus c{"one", LabelSet({"a", "b"}), {}};
  c.sequences.push_back({"s", "p", {{nn::Tensor({8, 8, 1}, 0.5), 1, 0}}});
  const TrainedPipeline p = train_two_step(c, toy_config());
  EXPECT_EQ(predict_sequence(p, c.sequences[0].images()).size(), 1u);
}

TEST(TwoStep, SameSeedGivesIdenticalPipelines) {
  const data::Corpus corpus = data::generate_synthetic_corpus(toy_synth());
  const TrainedPipeline a = train_two_step(corpus, toy_config());
  const TrainedPipeline b = train_two_step(corpus, toy_config());
  EXPECT_EQ(nn::flatten_parameters(a.extractor), nn::flatten_parameters(b.extractor));
  EXPECT_EQ(a.crf.flatten(), b.crf.flatten());
}

TEST(TwoStep, StandardizedFeaturesHaveUnitScaleOnTrain) {
  const data::Corpus corpus = data::generate_synthetic_corpus(toy_synth());
  TwoStepConfig cfg = toy_config();
  cfg.standardize = true;
  const TrainedPipeline p = train_two_step(corpus, cfg);
  ASSERT_EQ(p.standardizer.mean.size(), 6u);
  double n = 0, sum = 0;
  for (const auto& s : corpus.sequences) {
    ObservationSequence obs = pipeline_features(p, s.images());
    for (std::size_t t = 0; t < obs.length(); ++t) sum += obs.frame(t)[0], n += 1;
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-9);
}

TEST(Predict, SingleFrameTakesBestStateScore) {
  const TrainedPipeline p = train_two_step(data::generate_synthetic_corpus(toy_synth()), toy_config());
  Rng rng(2);
  const auto frames = random_frames(rng, 1);
  const ObservationSequence obs = pipeline_features(p, frames);
  const Potentials pot = compute_potentials(p.crf, obs);
  EXPECT_EQ(predict_sequence(p, frames), (LabelSequence{argmax(pot.state.row(0))}));
}

TEST(Predict, ZeroTransitionsOnLogitsMatchSoftmaxArm) {
  const TrainedPipeline p =
      logit_passthrough(train_two_step(data::generate_synthetic_corpus(toy_synth()), toy_config()));
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto frames = random_frames(rng, 1 + rng.index(7));
    const LabelSequence y = predict_sequence(p, frames);
    EXPECT_EQ(y, predict_frames_softmax(p.extractor, frames));
    EXPECT_EQ(y.size(), frames.size());
    for (std::size_t v : y) EXPECT_LT(v, p.labels.size());
  }
}

TEST(Predict, ZeroedOutputLayerLabelsEverythingZero) {
  TrainedPipeline p = train_two_step(data::generate_synthetic_corpus(toy_synth()), toy_config());
  std::fill(p.extractor.output.weights.begin(), p.extractor.output.weights.end(), 0.0);
  std::fill(p.extractor.output.bias.begin(), p.extractor.output.bias.end(), 0.0);
  Rng rng(4);
  EXPECT_EQ(predict_frames_softmax(p.extractor, random_frames(rng, 5)), LabelSequence(5, 0));
}

TEST(Predict, DuplicatedFramesGetDuplicatedLabels) {
  const TrainedPipeline p = train_two_step(data::generate_synthetic_corpus(toy_synth()), toy_config());
  Rng rng(5);
  const auto base = random_frames(rng, 3);
  std::vector<nn::Tensor> doubled = base;
  doubled.insert(doubled.end(), base.begin(), base.end());
  const LabelSequence a = predict_frames_softmax(p.extractor, base);
  LabelSequence want = a;
  want.insert(want.end(), a.begin(), a.end());
  EXPECT_EQ(predict_frames_softmax(p.extractor, doubled), want);
}

TEST(Predict, IncoherentPipelineIsRejected) {
  TrainedPipeline p = train_two_step(data::generate_synthetic_corpus(toy_synth()), toy_config());
  p.crf = CrfModel(p.labels, 5);
  Rng rng(6);
  try {
    predict_sequence(p, random_frames(rng, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
  EXPECT_THROW(predict_frames_softmax(p.extractor, {}), Error);
}
