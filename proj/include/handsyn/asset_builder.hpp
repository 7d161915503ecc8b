#pragma once
// Deterministic procedural hand: an elliptical palm plus one tube per digit.
//
// Rest pose is a flat right hand: wrist at the origin, fingers along +y, back of
// the hand facing +z, thumb on the +x side. Sizes are adult-hand scale in meters.

#include <cstddef>

#include "handsyn/hand_model.hpp"

namespace handsyn {

struct AssetOptions {
  /// 21 (wrist + 4 per digit) or 25 (adds a carpometacarpal joint to each finger
  /// except the thumb; the topology map then selects the 21-joint skeleton).
  std::size_t joints = 21;
  std::size_t rings_per_digit = 10;
  std::size_t ring_vertices = 12;
  std::size_t palm_rings = 10;
  std::size_t palm_ring_vertices = 24;
};

/// Joint ordering for 21 joints: 0 wrist, then thumb, index, middle, ring, pinky
/// with four joints each (base, middle, distal, tip).
HandModel build_hand_asset(const AssetOptions& options = {});

}  // namespace handsyn
