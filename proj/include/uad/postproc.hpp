#pragma once

#include "uad/volume.hpp"

namespace uad {

// Only the 3-D cross of width 1 (center voxel plus its 6 face neighbors) is
// supported; kept as a type so call sites state the element they use.
struct StructuringElement {
    enum class Kind { cross3d };
    Kind kind = Kind::cross3d;
    int radius = 1;
};

enum class MorphOp { dilate, erode };

// Binary dilation/erosion. Dilation drops hits outside the array; erosion is
// its dual (out-of-bounds neighbors cannot veto), so closing stays extensive
// on every mask.
BinaryMask3 morph(const BinaryMask3& mask, MorphOp op, StructuringElement se = {});

inline BinaryMask3 dilate(const BinaryMask3& m) { return morph(m, MorphOp::dilate); }
inline BinaryMask3 erode(const BinaryMask3& m) { return morph(m, MorphOp::erode); }

// Voxelized 3-D convex hull: voxels whose centers satisfy every supporting
// half-space of the hull of the mask's voxel centers. Degenerate (flat or
// tiny) inputs hull to themselves.
BinaryMask3 convex_hull_mask(const BinaryMask3& mask);

// CSF exclusion mask: morphological closing (two dilations, two erosions) of
// the union of both segmentations restricted to the gross brain, plus the
// one-voxel outer cortical rim left by eroding the brain's convex hull.
BinaryMask3 refine_csf_mask(const BinaryMask3& seg_a, const BinaryMask3& seg_b,
                            const BinaryMask3& gross_brain);

// Zeroes scores inside the exclusion mask and removes them from valid_mask.
AnomalyMap apply_exclusion(const AnomalyMap& map, const BinaryMask3& exclusion);

// Per-channel (X - min) / (max - min); errors on a constant channel.
Volume minmax_normalize(const Volume& volume);

}  // namespace uad
