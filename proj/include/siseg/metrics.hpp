#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "siseg/error.hpp"
#include "siseg/preprocess.hpp"
#include "siseg/si_codec.hpp"
#include "siseg/tensor.hpp"
#include "siseg/unet.hpp"
#include "siseg/volume.hpp"

// Segmentation scoring on binary 3D masks. Both the super-image and the
// 3D pipelines funnel their predictions through score(), so the two modes
// are always compared under identical metrics.

namespace siseg {

struct SegScores {
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// DSC = 2|P∩G| / (|P| + |G|), precision = TP/(TP+FP), recall = TP/(TP+FN)
/// over all voxels. Degenerate conventions: both masks empty scores
/// (1, 1, 1); an empty prediction against a nonempty truth scores
/// (0, 1, 0); a nonempty prediction against an empty truth scores
/// (0, 0, 1).
inline SegScores score(const Volume& pred, const Volume& gt) {
  if (!pred.same_shape(gt))
    throw DimMismatch("score: " + pred.shape_string() + " vs " + gt.shape_string());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const float p = pred.data[i];
    const float g = gt.data[i];
    if ((p != 0.0f && p != 1.0f) || (g != 0.0f && g != 1.0f))
      throw NonBinaryInput("score: masks must contain only 0 and 1");
    if (p == 1.0f && g == 1.0f) ++tp;
    else if (p == 1.0f) ++fp;
    else if (g == 1.0f) ++fn;
  }
  const std::size_t psize = tp + fp, gsize = tp + fn;
  if (psize == 0 && gsize == 0) return {1.0, 1.0, 1.0};
  SegScores s;
  s.dsc = 2.0 * static_cast<double>(tp) / static_cast<double>(psize + gsize);
  s.precision = psize == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(psize);
  s.recall = gsize == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(gsize);
  return s;
}

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1); 0 for a single value
};

inline Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw EmptyList("aggregate of an empty list");
  Aggregate a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

/// "0.779±0.031" — the reporting format used throughout the result tables.
inline std::string format_mean_std(const Aggregate& a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f±%.3f", a.mean, a.stddev);
  return buf;
}

struct CaseScore {
  std::string id;
  SegScores scores;
};

struct FoldResult {
  std::size_t fold = 0;
  std::vector<CaseScore> cases;
  SegScores mean;  // arithmetic mean over cases
};

inline SegScores mean_scores(const std::vector<CaseScore>& cases) {
  SegScores m;
  for (const auto& c : cases) {
    m.dsc += c.scores.dsc;
    m.precision += c.scores.precision;
    m.recall += c.scores.recall;
  }
  const double n = static_cast<double>(cases.size());
  if (n > 0) {
    m.dsc /= n;
    m.precision /= n;
    m.recall /= n;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation paths. Predictions are binarized at 0.5 and scored in 3D
// voxel space in both modes.

/// Super-image route with an arbitrary predictor: encodes the volume,
/// calls predict (SuperImage in, single-channel probability SuperImage
/// out), rearranges the prediction back to 3D, binarizes, scores.
template <typename Predictor>
SegScores evaluate_si_with(Predictor&& predict, const Volume& image, const Volume& gt,
                           const GridLayout& g) {
  const SuperImage si = to_super_image(image, g);
  const SuperImage pred_si = predict(si);
  Volume pred = from_super_image(pred_si, g, image.height, image.width);
  return score(binarize(pred, 0.5f), gt);
}

/// Runs a 2D model over the image's super-image encoding and scores the
/// rearranged 3D prediction against gt.
template <typename T>
SegScores evaluate_si(nn::UNet<T>& model, const Volume& image, const Volume& gt,
                      const GridLayout& g) {
  return evaluate_si_with(
      [&](const SuperImage& si) {
        nn::Tensor<T> x({1, si.channels, si.height, si.width});
        for (std::size_t i = 0; i < si.data.size(); ++i)
          x.values()[i] = static_cast<T>(si.data[i]);
        nn::Tensor<T> y = model.forward(x);
        if (y.shape()[1] != 1)
          throw BadShape("evaluate_si needs a single-channel model output");
        SuperImage out;
        out.height = si.height;
        out.width = si.width;
        out.channels = 1;
        out.slice_height = si.slice_height;
        out.slice_width = si.slice_width;
        out.grid = si.grid;
        out.data.resize(out.size());
        for (std::size_t i = 0; i < out.data.size(); ++i)
          out.data[i] = static_cast<float>(y.values()[i]);
        return out;
      },
      image, gt, g);
}

/// Runs a 3D model directly on the volume and scores the prediction.
template <typename T>
SegScores evaluate_vol(nn::UNet<T>& model, const Volume& image, const Volume& gt) {
  nn::Tensor<T> x({1, image.channels, image.depth, image.height, image.width});
  // Canonical volume order (c, d, h, w) is exactly (1, C, D, H, W).
  for (std::size_t i = 0; i < image.data.size(); ++i)
    x.values()[i] = static_cast<T>(image.data[i]);
  nn::Tensor<T> y = model.forward(x);
  if (y.shape()[1] != 1) throw BadShape("evaluate_vol needs a single-channel model output");
  Volume pred(image.height, image.width, image.depth, 1);
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    pred.data[i] = static_cast<float>(y.values()[i]);
  return score(binarize(pred, 0.5f), gt);
}

}  // namespace siseg
