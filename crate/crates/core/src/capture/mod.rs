//! Capture simulation: scripted performances, paired renders, flash-based
//! stream synchronisation and dataset export.

mod dataset;
mod script;
mod sync;

pub use dataset::{
    export_dataset, load_frame, read_params, render_pair, split_of, CaptureRig, DatasetEntry, DatasetKind,
    DatasetManifest, ExportOptions, ParamRecord, RenderedPair, SequenceRecord, Split, MANIFEST_FILE, PARAMS_FILE,
    SPLIT_BLOCK,
};
pub use script::{gen_performance, PerformanceScript, Scenario, FRAME_RATE, FRONTAL_DISTANCE, MAX_EXPRESSION_SIGMAS};
pub use sync::{
    align_streams, detect_onsets, inject_sync_events, is_sync_frame, sync_level, FrameStream, StreamSource, SyncReport,
    SYNC_EVENT_FRAMES, SYNC_PATCH, SYNC_PERIOD_S, SYNC_THRESHOLD,
};
