//! A spec small enough to train every model in seconds.

use swarm_intent::harness::ExperimentSpec;

pub fn tiny_spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::desk_scale(3);
    s.seeds = vec![1];
    s.robot_counts = vec![1, 2];
    s.perception.feature_dim = 6;
    s.model.feature_dim = 6;
    s.model.gcn_hidden = 6;
    s.model.embed_dim = 4;
    s.model.gru_hidden = 6;
    s.gcn_train.epochs = 2;
    s.gru_train.epochs = 2;
    s.dataset.episodes = 50;
    s.dataset.episode_ticks = 120;
    s.dataset.gcn_stride = 20;
    s.dataset.train_stride = 20;
    s.dataset.eval_stride = 10;
    s
}
