#pragma once

// Umbrella header for the 3DmFV point-cloud representation library.

#include "mfv3d/classify.hpp"
#include "mfv3d/common.hpp"
#include "mfv3d/corrupt.hpp"
#include "mfv3d/encoder.hpp"
#include "mfv3d/gmm.hpp"
#include "mfv3d/mesh.hpp"
#include "mfv3d/pipeline.hpp"
#include "mfv3d/pointcloud.hpp"
#include "mfv3d/reconstruct.hpp"
#include "mfv3d/serialize.hpp"
