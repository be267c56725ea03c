#pragma once

#include "vanad/admm.hpp"
#include "vanad/config.hpp"
#include "vanad/core.hpp"
#include "vanad/dataset.hpp"
#include "vanad/flow.hpp"
#include "vanad/imaging.hpp"
#include "vanad/metrics.hpp"
#include "vanad/reconstruction.hpp"
#include "vanad/remote_backbone.hpp"
#include "vanad/scoring.hpp"
