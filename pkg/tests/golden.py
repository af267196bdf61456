"""Reference values: light-traffic ratios and N = 4 occupancy tails."""

# alpha*_q / alpha_q(P) for q = 0..6, uniform complete graph against each ring
LIGHT_RATIOS = {
    (4, "hom"): [1, 1, 0.980392156862745, 0.96, 0.943204073638857, 0.930467762326168,
                 0.921194126435824],
    (4, 0.7): [1, 1, 0.971250971250971, 0.937207122774133, 0.905504444191747,
               0.878431372549021, 0.856277088258454],
    (4, 0.9): [1, 1, 0.944822373393802, 0.874890638670166, 0.806306009471013,
               0.744710990847219, 0.691423276153527],
    (12, "hom"): [1, 1, 0.980044345898006, 0.946957652840008, 0.905852280011906,
                  0.860428765918901, 0.813288386512557],
    (12, 0.7): [1, 1, 0.976234649704038, 0.936711901044791, 0.887663426664451,
                0.833694477053129, 0.778064380187853],
    (12, 0.9): [1, 1, 0.96498122434722, 0.907263089679475, 0.836822259808823,
                0.761041693064133, 0.685002867533652],
}

# P{Q >= q}, q = 0..10, N = 4 at lam/mu = 0.8
OCCUPANCY_TAILS = {
    "uniform-complete-4": [1, 0.931555555555556, 0.822044444444444, 0.700365432098765,
                           0.583553580246914, 0.479374713854595, 0.390216986337449,
                           0.315765053766194, 0.254529877489407, 0.204647383482556,
                           0.164263933297773],
    "hom-ring-4": [1, 0.935384615384615, 0.832, 0.714830769230769, 0.599958974358974,
                   0.495686017094017, 0.405226265527066, 0.328926615460589,
                   0.265719332143083, 0.213969240855798, 0.171926267664631],
    "het-ring-4-e07": [1, 0.938978102189781, 0.84134306569343, 0.729648583941605,
                       0.618526894403892, 0.515953069864071, 0.425463471594268,
                       0.347944293517187, 0.282842049740837, 0.22891695432166,
                       0.184683562391768],
    "het-ring-4-e09": [1, 0.950515916575192, 0.871341383095499, 0.778232131723381,
                       0.68170254050494, 0.588289596735602, 0.501733322395804,
                       0.423883198614478, 0.355359191309418, 0.296018647364001,
                       0.245277129251184],
}
