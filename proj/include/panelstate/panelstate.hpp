#pragma once

#include "panelstate/clustering.hpp"
#include "panelstate/errors.hpp"
#include "panelstate/events.hpp"
#include "panelstate/io.hpp"
#include "panelstate/log.hpp"
#include "panelstate/model.hpp"
#include "panelstate/normal_math.hpp"
#include "panelstate/particle_filter.hpp"
#include "panelstate/reports.hpp"
#include "panelstate/rng.hpp"
#include "panelstate/sampler.hpp"
#include "panelstate/simulate.hpp"
#include "panelstate/stochastics.hpp"
