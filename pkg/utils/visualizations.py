import pandas as pd
import numpy as np
import plotly.express as px
import plotly.graph_objects as go

def create_ita_chart(ita_frame):
    """
    Create the FS vs PT CER chart of an ITA result table

    Parameters:
    ita_frame: DataFrame with columns manuscript, pages, fs_cer, pt_cer

    Returns:
    plotly.graph_objects.Figure: The created chart
    """
    data = ita_frame.copy()
    data['fs_cer'] = pd.to_numeric(data['fs_cer'], errors='coerce')
    data['pt_cer'] = pd.to_numeric(data['pt_cer'], errors='coerce')
    data['pages'] = pd.to_numeric(data['pages'], errors='coerce')

    long_df = data.melt(
        id_vars=['manuscript', 'pages'],
        value_vars=['fs_cer', 'pt_cer'],
        var_name='Arm',
        value_name='CER'
    ).dropna(subset=['CER'])
    long_df['Arm'] = long_df['Arm'].map({'fs_cer': 'From scratch', 'pt_cer': 'Pretrained'})

    fig = px.line(
        long_df,
        x='pages',
        y='CER',
        color='Arm',
        line_dash='manuscript' if long_df['manuscript'].nunique() > 1 else None,
        markers=True,
        title='CER by Number of Training Pages',
        labels={'pages': 'Training pages', 'CER': 'CER (%)'},
        color_discrete_sequence=['#FF6B00', '#1F3A93']
    )

    fig.update_layout(
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1)
    )

    return fig

def create_confusion_chart(confusion_frame, top_n=10):
    """
    Create a bar chart of the most common confusions

    Parameters:
    confusion_frame: DataFrame with columns GT, PRED, CNT, %
    top_n: Number of confusions to show

    Returns:
    plotly.graph_objects.Figure: The created chart
    """
    data = confusion_frame.copy().head(top_n)
    data['CNT'] = pd.to_numeric(data['CNT'], errors='coerce')
    data['Confusion'] = data['GT'].replace('', '∅') + ' → ' + data['PRED'].replace('', '∅')

    fig = px.bar(
        data,
        x='CNT',
        y='Confusion',
        orientation='h',
        title=f'Top {len(data)} Confusions',
        labels={'CNT': 'Count'},
        color='CNT',
        color_continuous_scale='Oranges'
    )
    fig.update_layout(yaxis={'categoryorder': 'total ascending'})

    return fig

def create_confusion_heatmap(comparison_frame):
    """
    Create a heatmap of confusion counts across training stages

    Parameters:
    comparison_frame: DataFrame indexed by (gt, pred) with one count column per stage

    Returns:
    plotly.graph_objects.Figure: The created heatmap
    """
    labels = [f"{g or '∅'} → {p or '∅'}" for g, p in comparison_frame.index]
    values = comparison_frame.values

    fig = go.Figure(data=go.Heatmap(
        z=values,
        x=list(comparison_frame.columns),
        y=labels,
        colorscale='Oranges',
        text=values,
        texttemplate="%{text}",
        hovertemplate='Confusion: %{y}<br>Stage: %{x}<br>Count: %{z}<extra></extra>'
    ))

    fig.update_layout(
        title='Confusions per Training Stage',
        xaxis_title='Stage',
        yaxis_title='Confusion',
        height=max(300, 30 * len(labels))
    )

    return fig

def create_training_curve(log_frame, label=None):
    """
    Create a validation CER curve from a training log

    Parameters:
    log_frame: DataFrame of JSON-lines log records (epoch, samples_seen, val_cer, best, stopped)
    label: Optional run name for the title

    Returns:
    plotly.graph_objects.Figure: The created chart
    """
    fig = go.Figure()

    fig.add_trace(go.Scatter(
        x=log_frame['samples_seen'],
        y=log_frame['val_cer'],
        mode='lines+markers',
        name='Validation CER',
        line=dict(color='#FF6B00')
    ))
    fig.add_trace(go.Scatter(
        x=log_frame['samples_seen'],
        y=log_frame['best'],
        mode='lines',
        name='Best so far',
        line=dict(color='#1F3A93', dash='dash')
    ))

    # Mark the best snapshot
    best_idx = log_frame['val_cer'].idxmin()
    fig.add_trace(go.Scatter(
        x=[log_frame.loc[best_idx, 'samples_seen']],
        y=[log_frame.loc[best_idx, 'val_cer']],
        mode='markers',
        name='Returned model',
        marker=dict(size=12, symbol='star', color='#2E8B57')
    ))

    fig.update_layout(
        title=f'Training Progress{f" - {label}" if label else ""}',
        xaxis_title='Samples seen',
        yaxis_title='Validation CER (%)',
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1)
    )

    return fig

def create_corpus_chart(stats_frame):
    """
    Create a chart of pages and lines per manuscript

    Parameters:
    stats_frame: DataFrame from corpus_stats

    Returns:
    plotly.graph_objects.Figure: The created chart
    """
    data = stats_frame.copy()
    data['untranscribed'] = data['lines'] - data['transcribed']

    fig = px.bar(
        data,
        x='manuscript',
        y=['transcribed', 'untranscribed'],
        title='Lines per Manuscript',
        labels={'value': 'Lines', 'manuscript': 'Manuscript', 'variable': 'Status'},
        color_discrete_sequence=['#FF6B00', '#D3D3D3'],
        hover_data={'style': True, 'pages': True}
    )

    return fig

def create_confidence_histogram(confidences):
    """
    Create a histogram of line confidences

    Parameters:
    confidences: Sequence of line confidence values in [0,1]

    Returns:
    plotly.graph_objects.Figure: The created chart
    """
    fig = px.histogram(
        pd.DataFrame({'Confidence': np.asarray(confidences, dtype=float)}),
        x='Confidence',
        nbins=20,
        title='Line Confidence Distribution',
        color_discrete_sequence=['#FF6B00']
    )
    fig.update_layout(xaxis_range=[0, 1])

    return fig
