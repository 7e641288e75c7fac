#pragma once

// Synthetic class-incremental streams.
//
// Every task owns a frame: an orthonormal dim x frame_rank matrix plus a
// centre. A class mean is centre + class_scale * frame * a_c for a random
// unit a_c, and samples scatter mostly inside the frame. A task with
// similarity s draws its frame by blending a jittered copy of an earlier
// task's root frame (weight s) with a fresh random frame (weight 1 - s).

#include "lw2g/subspace.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lw2g {

struct StreamSpec {
    int n_tasks = 6;
    int classes_per_task = 4;
    int dim = 64;
    std::vector<double> similarity_schedule;  // empty means all zero
    int samples_per_class = 50;
    std::uint64_t seed = 0;

    int frame_rank = 8;
    double class_scale = 3.0;
    double in_frame_noise = 0.6;
    double isotropic_noise = 0.15;
    double centre_norm = 4.0;
    double jitter_deg = 10.0;
    double mean_shift = 0.05;

    void validate() const;
    double similarity(int task) const;
};

struct TaskDataset {
    int task = 0;
    std::vector<int> classes;  // global labels, contiguous
    Mat train_x;
    std::vector<int> train_y;
    Mat test_x;
    std::vector<int> test_y;

    // Generator provenance, exposed for checks.
    int root_task = 0;  // task whose frame this one derives from (itself when fresh)
    Mat frame;
    Vec centre;

    int first_class() const { return classes.front(); }
    int n_classes() const { return static_cast<int>(classes.size()); }
};

std::vector<TaskDataset> generate(const StreamSpec& spec);

/// Largest principal angle (radians) between the column spans of two
/// orthonormal frames of equal rank.
double max_principal_angle(const Mat& a, const Mat& b);

/// CSV dump: header `label,f0,...,f{dim-1}`, one row per sample.
void write_csv(std::ostream& out, const Mat& x, const std::vector<int>& y);

}  // namespace lw2g
