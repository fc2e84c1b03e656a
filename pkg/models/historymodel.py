""" Training history: one data point per evaluation interval, with
    per-term losses and validation metrics, plus the curve plot.
"""

###########
# Imports #
###########
# Import system packages
import io

# Import data science packages
import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt


#############
# Constants #
#############
LOSS_TERMS = ('kge', 'diff', 'tail', 'head', 'distill', 'rank', 'total')
METRICS = ('valid_mrr', 'valid_h1', 'valid_h3', 'valid_h10')
COLUMNS = ('epoch',) + LOSS_TERMS + METRICS


######################
# Data Point Classes #
######################
class HistoryPoint:
    """ Losses and validation metrics at one evaluated epoch.
        Losses are epoch means; they are NaN at epoch 0.
    """
    def __init__(self, epoch=0, **values):
        self.epoch = int(epoch)
        for name in LOSS_TERMS + METRICS:
            setattr(self, name, float(values.get(name, np.nan)))


    def as_dict(self):
        return {name: getattr(self, name) for name in COLUMNS}


    def __eq__(self, other):
        if not isinstance(other, HistoryPoint):
            return NotImplemented
        return all(
            getattr(self, name) == getattr(other, name) or
            (np.isnan(getattr(self, name)) and np.isnan(getattr(other, name)))
            for name in COLUMNS)


class HistoryWrangler:
    """ Ordered collection of history points. """
    def __init__(self, points=()):
        self.datapoints = list(points)


    def new_data_point(self, epoch, **values):
        """ Create a HistoryPoint and append it to the list. """
        dp = HistoryPoint(epoch, **values)
        self.datapoints.append(dp)
        return dp


    def __len__(self):
        return len(self.datapoints)


    def __eq__(self, other):
        return isinstance(other, HistoryWrangler) and \
            self.datapoints == other.datapoints


    def copy(self):
        return HistoryWrangler(
            HistoryPoint(**dp.as_dict()) for dp in self.datapoints)


    def mrr_trajectory(self):
        return [(dp.epoch, dp.valid_mrr) for dp in self.datapoints]


    def best(self):
        """ Point with the highest validation MRR; earliest on ties. """
        scored = [dp for dp in self.datapoints if not np.isnan(dp.valid_mrr)]
        if not scored:
            return None
        return max(scored, key=lambda dp: (dp.valid_mrr, -dp.epoch))


    def to_frame(self):
        return pd.DataFrame([dp.as_dict() for dp in self.datapoints],
                            columns=list(COLUMNS))


    def to_tsv(self):
        """ Tab-separated text with full float precision. """
        return self.to_frame().to_csv(sep='\t', index=False, float_format='%.17g',
                                      lineterminator='\n')


    @classmethod
    def from_tsv(cls, text):
        if not text.strip():
            return cls()
        frame = pd.read_csv(io.StringIO(text), sep='\t',
                            float_precision='round_trip')
        return cls(HistoryPoint(**row) for row in frame.to_dict('records'))


    ############
    # Plotting #
    ############
    def _make_attribute_list(self, attr):
        return [getattr(dp, attr) for dp in self.datapoints]


    def plot_data(self, path):
        """ Loss curves (left) and validation metrics (right), saved to
            `path` without opening a window.
        """
        epochs = self._make_attribute_list('epoch')
        fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(11, 4))

        for term in LOSS_TERMS:
            ax_loss.plot(epochs, self._make_attribute_list(term), marker='.',
                         label=term)
        ax_loss.set_xlabel("Epoch")
        ax_loss.set_ylabel("Loss (epoch mean)")
        ax_loss.legend(fontsize='small')

        for metric in METRICS:
            ax_metric.plot(epochs, self._make_attribute_list(metric),
                           marker='o', label=metric.replace('valid_', ''))
        ax_metric.set_xlabel("Epoch")
        ax_metric.set_ylabel("Validation (filtered)")
        ax_metric.set_ylim(0, 1)
        best = self.best()
        if best is not None:
            ax_metric.set_title(f"Best MRR {best.valid_mrr:.4f} at epoch {best.epoch}")
        ax_metric.legend(fontsize='small')

        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return path
