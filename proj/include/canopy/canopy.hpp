#pragma once

#include "canopy/core.hpp"
#include "canopy/diffrender.hpp"
#include "canopy/error.hpp"
#include "canopy/footprint.hpp"
#include "canopy/io.hpp"
#include "canopy/losses.hpp"
#include "canopy/metrics.hpp"
#include "canopy/nearest.hpp"
#include "canopy/protree.hpp"
#include "canopy/reconstruct.hpp"
#include "canopy/sensor.hpp"
